import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from stencilc.symbolic import (Access, Add, Constant, Grid, FunctionDecl, Mul,
                               Pow, Symbol, add, call, evaluate, mul, num,
                               op_count, pow_, substitute)


a, b, c = Symbol("a"), Symbol("b"), Symbol("c")


def test_add_flattens_and_collects():
    e = add(a, add(b, a))
    assert isinstance(e, Add)
    # Like terms collected: 2*a + b
    assert set(e.children) == {mul(num(2), a), b}


def test_mul_merges_powers():
    e = mul(a, a, b)
    assert isinstance(e, Mul)
    assert pow_(a, 2) in e.children


def test_division_is_negative_power():
    e = a / b
    assert e == mul(a, pow_(b, -1))


def test_constant_folding():
    assert add(num(1), num(2)) == num(3)
    assert mul(num(Fraction(1, 2)), num(4)) == num(2)
    assert pow_(num(2), -1) == num(Fraction(1, 2))
    assert mul(num(0), a) == num(0)


def test_pow_invariants():
    assert pow_(a, 1) == a
    assert pow_(a, 0) == num(1)
    assert pow_(pow_(a, 2), 3) == pow_(a, 6)
    # Pow distributes over Mul so division normalizes per factor
    assert pow_(mul(a, b), -1) == mul(pow_(a, -1), pow_(b, -1))


def _random_expr(rng, depth=0):
    syms = [a, b, c]
    choices = ["sym", "const"]
    if depth < 4:
        choices += ["add", "mul", "pow"]
    kind = rng.choice(choices)
    if kind == "sym":
        return rng.choice(syms)
    if kind == "const":
        return num(rng.randint(-3, 3))
    if kind == "add":
        return add(*[_random_expr(rng, depth + 1)
                     for _ in range(rng.randint(2, 3))])
    if kind == "mul":
        return mul(*[_random_expr(rng, depth + 1)
                     for _ in range(rng.randint(2, 3))])
    base = _random_expr(rng, depth + 1)
    exp = rng.choice([-2, -1, 2, 3])
    if base == num(0) and exp < 0:
        base = a
    return pow_(base, exp)


def _check_flat(e):
    if isinstance(e, Add):
        assert len(e.children) >= 2
        assert not any(isinstance(k, Add) for k in e.children)
    if isinstance(e, Mul):
        assert len(e.children) >= 2
        assert not any(isinstance(k, Mul) for k in e.children)
    if isinstance(e, Pow):
        assert isinstance(e.exponent, int) and e.exponent != 0
    from stencilc.symbolic.expr import children_of
    for k in children_of(e):
        _check_flat(k)


@given(st.integers(0, 10_000))
def test_flattened_form_property(seed):
    rng = random.Random(seed)
    _check_flat(_random_expr(rng))


def test_op_count_examples():
    assert op_count(add(a, b)) == 1
    t0, u1, u2, u3 = Symbol("t0"), Symbol("u1"), Symbol("u2"), Symbol("u3")
    e = add(mul(num(9.0), t0, u1), mul(num(-18.0), t0, u2),
            mul(num(9.0), t0, u3))
    assert op_count(e) == 8
    assert op_count(add(call("sin", a), num(1))) == 51


def test_op_count_skips_index_arithmetic():
    g = Grid((8,))
    u = FunctionDecl("u", "function", g)
    acc = Access(u, (add(Symbol("x"), num(3)),))
    assert op_count(acc) == 0
    assert op_count(add(acc, acc, a)) == 2


def test_substitute_folds_constants():
    h = Symbol("h_x")
    assert substitute(mul(h, num(2)), {h: num(Fraction(1, 2))}) == num(1)


def test_substitute_identity():
    e = add(a, b)
    assert substitute(e, {}) is e


def test_substitute_evaluate_commute():
    rng = random.Random(7)
    for _ in range(20):
        e = _random_expr(rng)
        env = {s: rng.uniform(0.5, 2.0) for s in "abc"}
        sub = substitute(e, {Symbol("a"): num(env["a"])})
        v1 = evaluate(sub, env)
        v2 = evaluate(e, env)
        assert v1 == pytest.approx(v2, rel=1e-12, abs=1e-12)


def test_deterministic_ordering():
    e1 = add(b, a, c)
    e2 = add(c, a, b)
    assert e1 == e2
    assert repr(e1) == repr(e2)
