import itertools

import pytest

from stencilc.dependence import (ANTI, FLOW, OUTPUT, REDUCTION,
                                 detect_flow_directions, get_dependences,
                                 lamport_distance)
from stencilc.lowering import BACKWARD, FORWARD, lower
from stencilc.symbolic import (Access, Eq, FunctionDecl, Grid, Symbol, add,
                               dt2, inject, laplace, mul, num, solve_for)


def _1d():
    g = Grid((11,))
    u = FunctionDecl("u", "timefunction", g, space_order=2, time_order=2)
    v = FunctionDecl("v", "timefunction", g, space_order=2, time_order=2)
    return g, u, v


def _shifted(f, t_off, x_off):
    t, x = Symbol("t"), Symbol("x")
    dt_, h = Symbol("dt"), Symbol("h_x")
    return Access(f, (add(t, mul(num(t_off), dt_)),
                      add(x, mul(num(x_off), h))))


def test_wave_self_flow_carried_by_time():
    g, u, v = _1d()
    m = FunctionDecl("m", "function", g)
    stencil = solve_for(m.at * dt2(u) - laplace(u), u.forward)
    low = lower(Eq(u.forward, stencil))
    deps = get_dependences([low])
    flows = [d for d in deps if d.kind == FLOW and d.function is u]
    assert flows
    for d in flows:
        assert d.cause == g.time_dim
        assert d.distance_along(g.time_dim) in (1, 2)
        assert d.is_carried


def test_negative_leading_distance_normalizes_to_anti():
    g, u, v = _1d()
    e1 = lower(Eq(_shifted(u, 1, 0), _shifted(u, 0, 0)))
    e2 = lower(Eq(_shifted(v, 1, 0), _shifted(u, 1, 1)))
    deps = get_dependences([e1, e2])
    cross = [d for d in deps if d.function is u and
             d.source is not d.sink]
    assert len(cross) == 1
    d = cross[0]
    # e2 reads u[t+1, x+1]; e1 writes it one x-iteration later
    assert d.kind == ANTI
    assert d.source is e2 and d.sink is e1
    assert d.distance == (0, 1)
    assert d.cause == g.dimensions[0]


def test_independent_dependence_zero_distance():
    g, u, v = _1d()
    e1 = lower(Eq(_shifted(u, 1, 0), _shifted(u, 0, 0)))
    e2 = lower(Eq(_shifted(v, 1, 0), _shifted(u, 1, 0)))
    deps = [d for d in get_dependences([e1, e2])
            if d.source is e1 and d.sink is e2]
    assert len(deps) == 1
    assert deps[0].kind == FLOW
    assert deps[0].is_independent
    assert deps[0].cause is None


def test_output_dependence():
    g, u, v = _1d()
    e1 = lower(Eq(_shifted(u, 1, 0), num(0)))
    e2 = lower(Eq(_shifted(u, 1, 1), num(1)))
    deps = [d for d in get_dependences([e1, e2]) if d.kind == OUTPUT]
    assert len(deps) == 1
    assert deps[0].distance_along(g.dimensions[0]) == 1


def test_injection_corners_form_reduction_with_unknown_distance():
    g, u, v = _1d()
    q = FunctionDecl("q", "sparsetimefunction", g, npoint=2,
                     coordinates=[(2.5,), (6.0,)])
    eqs = [lower(e) for e in inject(q, u.forward, q.at)]
    deps = get_dependences(eqs)
    on_u = [d for d in deps if d.function is u]
    assert on_u
    assert all(d.kind == REDUCTION for d in on_u)
    assert any(None in d.distance for d in on_u)
    assert all(d.cause is not None and d.cause.name == "p_q" for d in on_u
               if None in d.distance)


def test_detect_flow_directions():
    g, u, v = _1d()
    fwd = lower(Eq(_shifted(u, 1, 0), _shifted(u, 0, 0)))
    bwd = lower(Eq(_shifted(v, -1, 0), _shifted(v, 0, 0)))
    dirs = get_dependences([fwd])
    assert detect_flow_directions(dirs) == {g.time_dim: {FORWARD}}
    dirs = get_dependences([bwd])
    assert detect_flow_directions(dirs) == {g.time_dim: {BACKWARD}}


@pytest.mark.parametrize("kw,kr", list(itertools.product([-2, -1, 0, 1, 2],
                                                         repeat=2)))
def test_lamport_distance_matches_enumeration_oracle(kw, kr):
    """Brute-force conservatism: over a small iteration range, every pair
    of iterations touching the same element must be separated by exactly
    the reported distance."""
    g = Grid((32,))
    f = FunctionDecl("f", "function", g, space_order=4)
    x, h = Symbol("x"), Symbol("h_x")
    w = Access(f, (add(x, mul(num(kw), h)),))
    r = Access(f, (add(x, mul(num(kr), h)),))
    eq = lower(Eq(w, r + num(1)))
    from stencilc.lowering import collect_accesses
    read = collect_accesses(eq.rhs)[0]
    dist = lamport_distance(eq.lhs, read, eq.ispace.dims)
    # Enumerate: write at iteration i hits element i+kw; read at j hits j+kr
    # The sink (read) iteration minus the source (write) iteration
    observed = {j - i for i in range(8, 24) for j in range(8, 24)
                if i + kw == j + kr}
    assert observed == {dist[0]}


def test_dependences_require_analysis():
    g, u, v = _1d()
    from stencilc.lowering import indexify
    with pytest.raises(ValueError):
        get_dependences([indexify(Eq(u.forward, u.at))])
