"""Immutable symbolic expression trees.

The node kinds are deliberately minimal: constants (exact rationals or
floats), named symbols, indexed array accesses, flattened n-ary sums and
products, integer powers, and a handful of builtin calls. Division is
represented as multiplication by a negative power. All constructors
normalize, so client code can rely on the flattened-form invariants:
no Add directly under Add, no Mul under Mul, deterministic child order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Union

Number = Union[int, float, Fraction]

#: Builtin call weight used by op_count (transcendentals cost tens of flops).
CALL_WEIGHT = 50

#: Calls understood by the evaluator and the C emitter. ``idiv`` is exact
#: integer division, used for sub-sampled (conditional) time indices;
#: ``min``/``max`` appear in loop-bound arithmetic (blocking remainders).
KNOWN_CALLS = ("sin", "cos", "sqrt", "floor", "idiv", "min", "max")


class ExprError(ValueError):
    """Raised on malformed expression construction."""


class Expr:
    """Base class for all expression nodes. Instances are immutable."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, mul(num(-1), _coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), mul(num(-1), self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return mul(self, pow_(_coerce(other), -1))

    def __rtruediv__(self, other):
        return mul(_coerce(other), pow_(self, -1))

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __neg__(self):
        return mul(num(-1), self)


@dataclass(frozen=True, slots=True)
class Constant(Expr):
    value: Union[Fraction, float]

    def __repr__(self):
        if isinstance(self.value, Fraction):
            if self.value.denominator == 1:
                return str(self.value.numerator)
            return "%d/%d" % (self.value.numerator, self.value.denominator)
        return repr(self.value)


@dataclass(frozen=True, slots=True)
class Symbol(Expr):
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Access(Expr):
    """Indexed access into a declared function. ``func`` is compared by
    identity; two accesses are equal iff they target the same declaration
    with structurally equal index expressions."""

    func: "object"  # FunctionDecl; identity-hashed
    indices: tuple

    def __repr__(self):
        if not self.indices:
            return self.func.name
        return "%s[%s]" % (self.func.name, ", ".join(map(repr, self.indices)))


@dataclass(frozen=True, slots=True)
class Add(Expr):
    children: tuple

    def __repr__(self):
        return "(" + " + ".join(map(repr, self.children)) + ")"


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    children: tuple

    def __repr__(self):
        return "*".join(map(repr, self.children))


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __repr__(self):
        return "%r**%d" % (self.base, self.exponent)


@dataclass(frozen=True, slots=True)
class Call(Expr):
    name: str
    args: tuple

    def __repr__(self):
        return "%s(%s)" % (self.name, ", ".join(map(repr, self.args)))


ZERO = Constant(Fraction(0))
ONE = Constant(Fraction(1))


def num(value: Number) -> Constant:
    """Wrap a Python number. Ints become exact rationals."""
    if isinstance(value, (int, Fraction)):
        return Constant(Fraction(value))
    if isinstance(value, float):
        return Constant(value)
    raise ExprError("not a number: %r" % (value,))


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return num(value)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 0


def is_one(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 1


def _sort_key(e: Expr):
    if isinstance(e, Constant):
        return (0, "", float(e.value))
    if isinstance(e, Symbol):
        return (1, e.name, 0.0)
    if isinstance(e, Access):
        return (2, e.func.name, 0.0, tuple(_sort_key(i) for i in e.indices))
    if isinstance(e, Call):
        return (3, e.name, 0.0, tuple(_sort_key(a) for a in e.args))
    if isinstance(e, Pow):
        return (4, "", float(e.exponent), _sort_key(e.base))
    if isinstance(e, Mul):
        return (5, "", 0.0, tuple(_sort_key(c) for c in e.children))
    if isinstance(e, Add):
        return (6, "", 0.0, tuple(_sort_key(c) for c in e.children))
    raise ExprError("unknown node %r" % (e,))


def _const_add(a, b):
    return a + b


def _const_mul(a, b):
    return a * b


def _as_coeff_term(e: Expr):
    """Split ``e`` into (numeric coefficient, residual term)."""
    if isinstance(e, Constant):
        return e.value, ONE
    if isinstance(e, Mul):
        consts = [c.value for c in e.children if isinstance(c, Constant)]
        rest = [c for c in e.children if not isinstance(c, Constant)]
        if consts:
            coeff = consts[0]
            for c in consts[1:]:
                coeff = coeff * c
            if not rest:
                return coeff, ONE
            if len(rest) == 1:
                return coeff, rest[0]
            return coeff, Mul(tuple(rest))
    return Fraction(1), e


def add(*args) -> Expr:
    """Flattened, like-term-collecting sum with deterministic ordering."""
    const = Fraction(0)
    terms: dict = {}
    order: list = []

    def absorb(e):
        nonlocal const
        if isinstance(e, Add):
            for c in e.children:
                absorb(c)
        elif isinstance(e, Constant):
            const = _const_add(const, e.value)
        else:
            coeff, term = _as_coeff_term(e)
            if term in terms:
                terms[term] = terms[term] + coeff
            else:
                terms[term] = coeff
                order.append(term)

    for a in args:
        absorb(_coerce(a))

    children = []
    for term in order:
        coeff = terms[term]
        if coeff == 0 and not isinstance(coeff, float):
            continue
        if coeff == 1:
            children.append(term)
        else:
            children.append(mul(Constant(coeff), term))
    if const != 0 or isinstance(const, float) and const != 0.0:
        children.append(Constant(const))
    children.sort(key=_sort_key)
    if not children:
        return ZERO
    if len(children) == 1:
        return children[0]
    return Add(tuple(children))


def mul(*args) -> Expr:
    """Flattened product; repeated factors merge into powers."""
    const = Fraction(1)
    powers: dict = {}
    order: list = []

    def absorb_factor(base, exp):
        if base in powers:
            powers[base] += exp
        else:
            powers[base] = exp
            order.append(base)

    def absorb(e):
        nonlocal const
        if isinstance(e, Mul):
            for c in e.children:
                absorb(c)
        elif isinstance(e, Constant):
            const = _const_mul(const, e.value)
        elif isinstance(e, Pow):
            absorb_factor(e.base, e.exponent)
        else:
            absorb_factor(e, 1)

    for a in args:
        absorb(_coerce(a))

    if const == 0 and not isinstance(const, float):
        return ZERO
    children = []
    for base in order:
        exp = powers[base]
        if exp == 0:
            continue
        children.append(pow_(base, exp))
    children.sort(key=_sort_key)
    if const == 0 and isinstance(const, float):
        return Constant(0.0)
    if const != 1:
        children.insert(0, Constant(const))
    if not children:
        return ONE
    if len(children) == 1:
        return children[0]
    return Mul(tuple(children))


def pow_(base, exponent) -> Expr:
    base = _coerce(base)
    if isinstance(exponent, Expr):
        if isinstance(exponent, Constant) and isinstance(exponent.value, Fraction) \
                and exponent.value.denominator == 1:
            exponent = exponent.value.numerator
        else:
            raise ExprError("power exponent must be an integer, got %r" % (exponent,))
    if not isinstance(exponent, int):
        raise ExprError("power exponent must be an integer, got %r" % (exponent,))
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Constant):
        if base.value == 0 and exponent < 0:
            raise ExprError("division by symbolic zero")
        return Constant(base.value ** exponent)
    if isinstance(base, Pow):
        return pow_(base.base, base.exponent * exponent)
    if isinstance(base, Mul):
        return mul(*[pow_(c, exponent) for c in base.children])
    return Pow(base, exponent)


def call(name: str, *args) -> Expr:
    if name not in KNOWN_CALLS:
        raise ExprError("unknown builtin call %r" % name)
    args = tuple(_coerce(a) for a in args)
    if name == "floor" and len(args) == 1 and isinstance(args[0], Constant):
        return Constant(Fraction(math.floor(args[0].value)))
    if name == "idiv" and all(isinstance(a, Constant) for a in args):
        a, b = args
        return Constant(Fraction(math.floor(Fraction(a.value) / Fraction(b.value))))
    if name in ("min", "max") and all(isinstance(a, Constant) for a in args):
        fold = min if name == "min" else max
        return Constant(fold(a.value for a in args))
    return Call(name, args)


def access(func, indices: Iterable[Expr]) -> Access:
    return Access(func, tuple(_coerce(i) for i in indices))


# -- Traversal helpers -------------------------------------------------------


def children_of(e: Expr) -> tuple:
    if isinstance(e, (Add, Mul)):
        return e.children
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Call):
        return e.args
    if isinstance(e, Access):
        return e.indices
    return ()


def rebuild(e: Expr, new_children) -> Expr:
    if isinstance(e, Add):
        return add(*new_children)
    if isinstance(e, Mul):
        return mul(*new_children)
    if isinstance(e, Pow):
        return pow_(new_children[0], e.exponent)
    if isinstance(e, Call):
        return call(e.name, *new_children)
    if isinstance(e, Access):
        return Access(e.func, tuple(new_children))
    return e


def postorder(e: Expr):
    """Yield every node of ``e``, children first."""
    for c in children_of(e):
        yield from postorder(c)
    yield e


def substitute(e: Expr, rules: Mapping[Expr, Expr]) -> Expr:
    """Simultaneous structural replacement; constant folding happens as a
    side effect of rebuilding through the normalizing constructors."""
    if not rules:
        return e
    if e in rules:
        return rules[e]
    kids = children_of(e)
    if not kids:
        return e
    new = [substitute(c, rules) for c in kids]
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def free_symbols(e: Expr, into=None) -> set:
    if into is None:
        into = set()
    if isinstance(e, Symbol):
        into.add(e.name)
    for c in children_of(e):
        free_symbols(c, into)
    return into


def accesses_in(e: Expr) -> list:
    """All Access nodes in ``e`` (not descending into their indices)."""
    found = []

    def walk(node):
        if isinstance(node, Access):
            found.append(node)
            return
        for c in children_of(node):
            walk(c)

    walk(e)
    return found


def op_count(e: Expr) -> int:
    """Floating-point operation count. Index arithmetic inside accesses is
    excluded; builtin calls are weighted at CALL_WEIGHT."""
    if isinstance(e, (Constant, Symbol, Access)):
        return 0
    if isinstance(e, Add):
        return len(e.children) - 1 + sum(op_count(c) for c in e.children)
    if isinstance(e, Mul):
        return len(e.children) - 1 + sum(op_count(c) for c in e.children)
    if isinstance(e, Pow):
        inner = op_count(e.base)
        n = e.exponent
        if n > 0:
            return inner + n - 1
        return inner + (-n - 1) + 1  # |n|-1 multiplies plus one division
    if isinstance(e, Call):
        if e.name == "idiv":
            return sum(op_count(a) for a in e.args)
        return CALL_WEIGHT + sum(op_count(a) for a in e.args)
    raise ExprError("unknown node %r" % (e,))


def evaluate(e: Expr, symbols: Mapping[str, float],
             on_access: Callable[[Access], float] = None) -> float:
    """Numerically evaluate ``e``. Symbols resolve through ``symbols``;
    accesses through ``on_access`` (required if any are present)."""
    if isinstance(e, Constant):
        return float(e.value)
    if isinstance(e, Symbol):
        try:
            return float(symbols[e.name])
        except KeyError:
            raise ExprError("unbound symbol %r" % e.name)
    if isinstance(e, Access):
        if on_access is None:
            raise ExprError("no access handler for %r" % (e,))
        return on_access(e)
    if isinstance(e, Add):
        return sum(evaluate(c, symbols, on_access) for c in e.children)
    if isinstance(e, Mul):
        out = 1.0
        for c in e.children:
            out *= evaluate(c, symbols, on_access)
        return out
    if isinstance(e, Pow):
        return evaluate(e.base, symbols, on_access) ** e.exponent
    if isinstance(e, Call):
        args = [evaluate(a, symbols, on_access) for a in e.args]
        if e.name == "sin":
            return math.sin(args[0])
        if e.name == "cos":
            return math.cos(args[0])
        if e.name == "sqrt":
            return math.sqrt(args[0])
        if e.name == "floor":
            return float(math.floor(args[0]))
        if e.name == "idiv":
            return float(int(args[0]) // int(args[1]))
        if e.name == "min":
            return min(args)
        if e.name == "max":
            return max(args)
    raise ExprError("unknown node %r" % (e,))
