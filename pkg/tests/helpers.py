"""Shared builders for the wave-propagation example used across the
pipeline tests: a second-order stencil update, a sub-sampled snapshot
copy, and a pair of sparse source-injection increments."""

from stencilc.lowering import lower
from stencilc.symbolic import (Eq, FunctionDecl, Grid, dt2, inject, laplace,
                               solve_for)
from stencilc.symbolic.grid import Dimension


def wave_example(shape=(11,), so=2, factor=4, save=100, npoint=1,
                 coordinates=((5.25,),)):
    g = Grid(shape)
    u = FunctionDecl("u", "timefunction", g, space_order=so, time_order=2)
    m = FunctionDecl("m", "function", g, space_order=so)
    ts = Dimension("ts", "conditional", parent=g.time_dim, factor=factor)
    us = FunctionDecl("us", "timefunction", g, space_order=so, save=save,
                      time_dim=ts)
    q = FunctionDecl("q", "sparsetimefunction", g, npoint=npoint,
                     coordinates=list(coordinates))

    stencil = Eq(u.forward, solve_for(m.at * dt2(u) - laplace(u), u.forward))
    snapshot = Eq(us.at, u.at)
    sources = inject(q, u.forward, q.at)
    eqs = [stencil, snapshot] + sources
    funcs = {"grid": g, "u": u, "m": m, "us": us, "q": q}
    return funcs, eqs


def lowered_wave_example(**kwargs):
    funcs, eqs = wave_example(**kwargs)
    return funcs, [lower(e) for e in eqs]


def rotated_laplacian_example(so, shape=(13, 13)):
    """A rotated first-derivative stencil: d/dx of cos(theta) * du/dy. The
    inner derivative reappears translated at every outer stencil point, so
    cross-iteration redundancy elimination collapses its cost from
    quadratic in the space order down to linear."""
    from stencilc.symbolic import Symbol, call, mul
    from stencilc.symbolic.fd import derivative, derivative_of
    g = Grid(shape)
    u = FunctionDecl("u", "timefunction", g, space_order=so, time_order=2)
    th = FunctionDecl("theta", "function", g, space_order=so)
    w = FunctionDecl("w", "timefunction", g, space_order=so, time_order=2)
    x, y = g.dimensions
    inner = mul(call("cos", th.at), derivative(u, y, so, 1))
    expr = derivative_of(inner, x, so, 1, Symbol("h_x"))
    funcs = {"grid": g, "u": u, "theta": th, "w": w}
    return funcs, [lower(Eq(w.forward, expr))]


def acoustic_example(shape, so=2, src_coord=None, rec_coord=None):
    """Acoustic wave operator: leapfrog stencil, one injecting source and
    one interpolating receiver."""
    from stencilc.symbolic import Symbol, interpolate, mul, pow_
    g = Grid(shape)
    u = FunctionDecl("u", "timefunction", g, space_order=so, time_order=2)
    m = FunctionDecl("m", "function", g, space_order=so)
    if src_coord is None:
        src_coord = tuple(e / 2.0 for e in g.extent)
    if rec_coord is None:
        rec_coord = tuple(e / 4.0 for e in g.extent)
    src = FunctionDecl("src", "sparsetimefunction", g, npoint=1,
                       coordinates=[src_coord])
    rec = FunctionDecl("rec", "sparsetimefunction", g, npoint=1,
                       coordinates=[rec_coord])
    stencil = Eq(u.forward, solve_for(m.at * dt2(u) - laplace(u), u.forward))
    dt = Symbol("dt")
    source = inject(src, u.forward, mul(src.at, dt, dt, pow_(m.at, -1)))
    receiver = interpolate(rec, u.at)
    eqs = [stencil] + source + receiver
    funcs = {"grid": g, "u": u, "m": m, "src": src, "rec": rec}
    return funcs, eqs


def run_clusters(clusters, nt, data, grid, env_extra=None, npoint=0):
    """Reference executor over dict-backed arrays: clusters without a time
    dimension run once up front, the rest share one outer time loop in
    cluster order. ``data`` maps function name -> {index tuple: value} and
    is mutated in place."""
    import itertools

    from stencilc.symbolic.expr import evaluate

    env = dict(grid.symbol_values())
    env.update(env_extra or {})

    def exec_cluster(c, tval):
        for g in c.guards:
            if tval is None or tval % g.factor != 0:
                return
        dims = [iv.dim for iv, _ in c.ispace.entries if not iv.dim.is_time]
        ranges = []
        for d in dims:
            iv = c.ispace.interval_of(d)
            if d.kind == "space":
                n = grid.shape[grid.dimensions.index(d)]
                ranges.append(range(iv.lower, n - 1 + iv.upper + 1))
            elif d.kind == "sparse":
                ranges.append(range(npoint))
            else:
                raise AssertionError("unexpected dim %r" % d)
        for point in itertools.product(*ranges):
            penv = dict(env)
            if tval is not None:
                penv[grid.time_dim.name] = tval
            for d, v in zip(dims, point):
                penv[d.name] = v
            scalars = {}

            def on_access(acc):
                f = acc.func
                if f.kind == "temp" and not acc.indices:
                    return scalars[f.name]
                idx = [int(round(evaluate(i, penv, on_access=on_access)))
                       for i in acc.indices]
                if getattr(f, "is_modulo_time", False):
                    idx[0] %= f.time_dim.modulo
                return data.setdefault(f.name, {}).get(tuple(idx), 0.0)

            for eq in c.eqs:
                val = evaluate(eq.rhs, penv, on_access=on_access)
                f = eq.lhs.func
                if f.kind == "temp" and not eq.lhs.indices:
                    scalars[f.name] = val
                    continue
                idx = [int(round(evaluate(i, penv, on_access=on_access)))
                       for i in eq.lhs.indices]
                if getattr(f, "is_modulo_time", False):
                    idx[0] %= f.time_dim.modulo
                bucket = data.setdefault(f.name, {})
                key = tuple(idx)
                if eq.is_increment:
                    bucket[key] = bucket.get(key, 0.0) + val
                else:
                    bucket[key] = val

    static = [c for c in clusters
              if not any(iv.dim.is_time for iv, _ in c.ispace.entries)]
    timed = [c for c in clusters if c not in static]
    for c in static:
        exec_cluster(c, None)
    steps = range(nt)
    from stencilc.lowering import BACKWARD
    if any(c.ispace.direction_of(iv.dim) == BACKWARD
           for c in timed for iv, _ in c.ispace.entries if iv.dim.is_time):
        steps = reversed(steps)
    for tval in steps:
        for c in timed:
            exec_cluster(c, tval)
    return data
