"""Lowering of user equations to indexified, domain-aligned array form,
plus the per-equation local analysis producing iteration and data spaces.

Index conventions after lowering:
  - affine indices are ``dim_symbol + k`` with integer k (spacing and time
    step symbols divided out);
  - sub-sampled time indices become ``idiv(t, factor)`` with a guard
    ``t % factor == 0`` recorded on the equation;
  - non-affine (sparse) indices stay opaque; their space dimension does
    not enter the iteration space, the sparse point dimension does.

Domain alignment then shifts every index by the accessed function's
halo+padding, so that index 0 addresses the first allocated point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

from .symbolic.expr import (Access, Add, Call, Constant, Expr, Mul, Pow,
                            Symbol, add, call, children_of, evaluate,
                            free_symbols, mul, num, rebuild, substitute)
from .symbolic.grid import Dimension, Equation, FunctionDecl

FORWARD = "+"
BACKWARD = "-"
ANY = "*"

OPAQUE = object()


class LoweringError(ValueError):
    """Raised when an equation cannot be lowered to array form."""


@dataclass(frozen=True)
class Interval:
    """Offsets against the runtime extremes of a dimension: the compact
    interval [d_m + lower, d_M + upper]."""

    dim: Dimension
    lower: int = 0
    upper: int = 0

    def hull(self, other: "Interval") -> "Interval":
        return Interval(self.dim, min(self.lower, other.lower),
                        max(self.upper, other.upper))

    def __repr__(self):
        return "%s[%d,%d]" % (self.dim.name, self.lower, self.upper)


@dataclass(frozen=True)
class IterationSpace:
    """Ordered (interval, direction) pairs; dimensions pairwise distinct."""

    entries: Tuple[Tuple[Interval, str], ...]

    def __post_init__(self):
        dims = [iv.dim for iv, _ in self.entries]
        if len(set(dims)) != len(dims):
            raise LoweringError("duplicate dimension in iteration space")

    @property
    def dims(self) -> Tuple[Dimension, ...]:
        return tuple(iv.dim for iv, _ in self.entries)

    @property
    def intervals(self) -> Tuple[Interval, ...]:
        return tuple(iv for iv, _ in self.entries)

    def direction_of(self, dim: Dimension) -> str:
        for iv, d in self.entries:
            if iv.dim == dim:
                return d
        raise KeyError(dim.name)

    def interval_of(self, dim: Dimension) -> Interval:
        for iv, _ in self.entries:
            if iv.dim == dim:
                return iv
        raise KeyError(dim.name)

    def with_directions(self, directions: Dict[Dimension, str]) -> "IterationSpace":
        return IterationSpace(tuple(
            (iv, directions.get(iv.dim, d)) for iv, d in self.entries))

    def __repr__(self):
        return "[" + ", ".join("%r%s" % (iv, d) for iv, d in self.entries) + "]"


@dataclass(frozen=True)
class DataSpace:
    """Per-function intervals over the storage dimensions that are touched
    through loop-variable indices."""

    parts: Tuple[Tuple[FunctionDecl, Tuple[Interval, ...]], ...]

    def for_function(self, func: FunctionDecl) -> Tuple[Interval, ...]:
        for f, ivs in self.parts:
            if f is func:
                return ivs
        return ()

    def merged(self) -> Dict[str, Interval]:
        """Hull per dimension name across all functions."""
        out: Dict[str, Interval] = {}
        for _, ivs in self.parts:
            for iv in ivs:
                name = iv.dim.root.name
                if name in out:
                    out[name] = out[name].hull(
                        Interval(out[name].dim, iv.lower, iv.upper))
                else:
                    out[name] = Interval(iv.dim.root, iv.lower, iv.upper)
        return out

    def __repr__(self):
        bits = []
        for f, ivs in self.parts:
            bits.append("%s: %s" % (f.name, list(ivs)))
        return "{" + "; ".join(bits) + "}"


@dataclass(frozen=True)
class Guard:
    """Conditional execution along ``dim``: run iff dim % factor == 0."""

    dim: Dimension
    factor: int

    def predicate_repr(self) -> str:
        return "%s %% %d == 0" % (self.dim.name, self.factor)


@dataclass(frozen=True)
class LoweredEq:
    lhs: Access
    rhs: Expr
    is_increment: bool = False
    region: str = "domain"
    guards: Tuple[Guard, ...] = ()
    ispace: Optional[IterationSpace] = None
    dspace: Optional[DataSpace] = None
    direction_clash: bool = False

    @property
    def reads(self) -> Tuple[FunctionDecl, ...]:
        seen, out = set(), []
        for acc in collect_accesses(self.rhs):
            if id(acc.func) not in seen:
                seen.add(id(acc.func))
                out.append(acc.func)
        for acc in collect_accesses_in_indices(self.lhs):
            if id(acc.func) not in seen:
                seen.add(id(acc.func))
                out.append(acc.func)
        return tuple(out)

    @property
    def writes(self) -> FunctionDecl:
        return self.lhs.func

    def __repr__(self):
        op = "+=" if self.is_increment else "="
        return "%r %s %r" % (self.lhs, op, self.rhs)


# -- Access collection -------------------------------------------------------


def collect_accesses(e: Expr) -> List[Access]:
    """All Access nodes in ``e``, including ones nested inside the index
    expressions of other accesses."""
    out = []

    def walk(node):
        if isinstance(node, Access):
            out.append(node)
        for c in children_of(node):
            walk(c)

    walk(e)
    return out


def collect_accesses_in_indices(acc: Access) -> List[Access]:
    out = []
    for idx in acc.indices:
        out.extend(collect_accesses(idx))
    return out


# -- Index classification ----------------------------------------------------


def affine_offset(index: Expr, dim_symbol: Symbol,
                  unit: Optional[Symbol]) -> Union[int, object]:
    """Integer offset k when ``index == dim + k*unit`` (or ``dim + k`` for
    unit-free dimensions); OPAQUE when the dimension symbol does not occur;
    LoweringError for non-affine forms."""
    if index == dim_symbol:
        return 0
    free = free_symbols(index)
    if dim_symbol.name not in free:
        return OPAQUE
    diff = add(index, mul(num(-1), dim_symbol))
    dfree = free_symbols(diff)
    allowed = {unit.name} if unit is not None else set()
    if not dfree <= allowed:
        raise LoweringError(
            "index %r is not affine in %s" % (index, dim_symbol.name))
    if not dfree:
        if isinstance(diff, Constant) and Fraction(diff.value).denominator == 1:
            return int(diff.value)
        raise LoweringError("non-integer index offset %r" % (diff,))
    # diff = c0 + c1*unit; reject mixed or nonlinear forms
    e1 = evaluate(diff, {unit.name: 1.0})
    e2 = evaluate(diff, {unit.name: 2.0})
    e4 = evaluate(diff, {unit.name: 4.0})
    c1 = e2 - e1
    c0 = 2 * e1 - e2
    if abs(c0 + 4 * c1 - e4) > 1e-9:
        raise LoweringError("index offset %r not linear in %s"
                            % (diff, unit.name))
    if abs(c0) > 1e-9 and abs(c1) > 1e-9:
        raise LoweringError("mixed index offset %r" % (diff,))
    k = c1 if abs(c1) > 1e-9 else c0
    if abs(k - round(k)) > 1e-9:
        raise LoweringError("non-integer index offset %r" % (diff,))
    return int(round(k))


def _unit_for(decl: FunctionDecl, dim: Dimension) -> Optional[Symbol]:
    if dim.kind == "space":
        if decl.kind == "coordinates":
            return None
        return decl.grid.spacing_of(dim)
    if dim.is_time:
        return decl.grid.step_symbol
    return None


def _indexify_access(acc: Access, guards: List[Guard]) -> Access:
    decl = acc.func
    if decl.kind == "temp":
        return acc
    dims = decl.dims
    if len(dims) != len(acc.indices):
        raise LoweringError("arity mismatch accessing %s" % decl.name)
    new_indices = []
    for dim, idx in zip(dims, acc.indices):
        idx = _indexify_expr(idx)  # nested accesses first
        if dim.kind == "conditional":
            if idx != dim.symbol:
                raise LoweringError(
                    "offsets on sub-sampled dimension %s unsupported" % dim.name)
            g = Guard(dim.parent.root, dim.factor)
            if g not in guards:
                guards.append(g)
            new_indices.append(call("idiv", dim.parent.root.symbol,
                                    num(dim.factor)))
            continue
        k = affine_offset(idx, dim.symbol, _unit_for(decl, dim))
        if k is OPAQUE:
            new_indices.append(idx)
        else:
            new_indices.append(add(dim.symbol, num(k)))
    return Access(decl, tuple(new_indices))


def _indexify_expr(e: Expr, guards: Optional[List[Guard]] = None) -> Expr:
    if guards is None:
        guards = []
    if isinstance(e, Access):
        return _indexify_access(e, guards)
    kids = children_of(e)
    if not kids:
        return e
    return rebuild(e, [_indexify_expr(c, guards) for c in kids])


def indexify(eq: Equation) -> LoweredEq:
    """Convert function accesses into array accesses with integer offsets."""
    guards: List[Guard] = []
    lhs = _indexify_access(eq.lhs, guards)
    rhs = _indexify_expr(eq.rhs, guards)
    return LoweredEq(lhs, rhs, is_increment=eq.is_increment,
                     region=eq.region, guards=tuple(guards))


# -- Domain alignment --------------------------------------------------------


def _shift_for(decl: FunctionDecl, dim: Dimension) -> int:
    if dim.kind == "space" and decl.kind in ("function", "timefunction"):
        return decl.halo + decl.padding
    return 0


def _align_access(acc: Access) -> Access:
    decl = acc.func
    if decl.kind == "temp":
        return acc
    new_indices = []
    for dim, idx in zip(decl.dims, acc.indices):
        idx = _align_expr(idx)
        shift = _shift_for(decl, dim)
        if shift:
            idx = add(idx, num(shift))
        new_indices.append(idx)
    return Access(decl, tuple(new_indices))


def _align_expr(e: Expr) -> Expr:
    if isinstance(e, Access):
        return _align_access(e)
    kids = children_of(e)
    if not kids:
        return e
    return rebuild(e, [_align_expr(c) for c in kids])


def align_domain(eq: LoweredEq) -> LoweredEq:
    """Shift every index by the accessed function's halo+padding so the
    accesses address allocated storage directly."""
    return replace(eq, lhs=_align_access(eq.lhs), rhs=_align_expr(eq.rhs))


# -- Local analysis ----------------------------------------------------------


def _loop_dim_of(decl: FunctionDecl, dim: Dimension) -> Dimension:
    """The loop dimension through which a storage dimension is iterated."""
    if dim.kind in ("stepping", "conditional"):
        return dim.root
    return dim


def _access_offsets(acc: Access, aligned: bool = True) -> List[Tuple[Dimension, Dimension, object]]:
    """(storage dim, loop dim, offset-or-OPAQUE) triples for an access.
    Offsets are reported relative to the domain origin (alignment shift
    removed), so halo credit can be applied uniformly."""
    decl = acc.func
    if decl.kind == "temp":
        out = []
        for dim, idx in zip(decl.dims, acc.indices):
            try:
                k = affine_offset(idx, dim.symbol, None)
            except LoweringError:
                k = OPAQUE
            out.append((dim, dim, k))
        return out
    out = []
    for dim, idx in zip(decl.dims, acc.indices):
        if dim.kind == "conditional":
            out.append((dim, dim.parent.root, OPAQUE))
            continue
        sym = dim.symbol if dim.kind != "stepping" else dim.root.symbol
        try:
            k = affine_offset(idx, Symbol(sym.name), None)
        except LoweringError:
            k = OPAQUE
        if k is OPAQUE:
            out.append((dim, _loop_dim_of(decl, dim), OPAQUE))
        else:
            if aligned:
                k -= _shift_for(decl, dim)
            out.append((dim, _loop_dim_of(decl, dim), k))
    return out


def _dims_in_expr(e: Expr, registry: Dict[str, Dimension]) -> List[Dimension]:
    """Loop dimensions appearing (in order) in an index expression."""
    out = []
    for name in sorted(free_symbols(e)):
        if name in registry and registry[name] not in out:
            out.append(registry[name])
    return out


def _dimension_registry(eq: LoweredEq) -> Dict[str, Dimension]:
    registry: Dict[str, Dimension] = {}
    for acc in [eq.lhs] + collect_accesses(eq.rhs) + \
            collect_accesses_in_indices(eq.lhs):
        decl = acc.func
        if decl.kind == "temp":
            for dim in decl.dims:
                registry.setdefault(dim.name, dim)
            continue
        for dim in decl.dims:
            loop = _loop_dim_of(decl, dim)
            registry.setdefault(loop.name, loop)
        if decl.kind in ("function", "timefunction"):
            grid = decl.grid
            for d in grid.dimensions:
                registry.setdefault(d.name, d)
    return registry


def analyze(eq: LoweredEq, aligned: bool = True) -> LoweredEq:
    """Inspect an equation in isolation: iteration space with per-dimension
    directions, data space, inputs and outputs."""
    registry = _dimension_registry(eq)
    accesses = [eq.lhs] + collect_accesses(eq.rhs) + \
        collect_accesses_in_indices(eq.lhs)

    # Topological dimension order: order of appearance across index functions
    order: List[Dimension] = []
    for acc in accesses:
        decl = acc.func
        if decl.kind == "coordinates":
            continue
        dims = decl.dims if decl.kind != "temp" else decl.dims
        for dim, idx in zip(dims, acc.indices):
            if decl.kind == "temp":
                loop = dim
                k = OPAQUE
                try:
                    k = affine_offset(idx, dim.symbol, None)
                except LoweringError:
                    k = OPAQUE
            else:
                loop = _loop_dim_of(decl, dim)
                sym = Symbol(loop.name) if dim.kind in ("stepping", "conditional") \
                    else dim.symbol
                try:
                    k = affine_offset(idx, sym, None)
                except LoweringError:
                    k = OPAQUE
            if k is not OPAQUE or dim.kind == "conditional":
                if loop not in order:
                    order.append(loop)
            else:
                # Opaque index: any loop dims referenced inside still iterate
                for d in _dims_in_expr(idx, registry):
                    if d.kind != "space" and d not in order:
                        order.append(d)

    # Directions from self-dependences: the leading-nonzero dimension of
    # each (write, read) distance vector votes for its direction.
    votes: Dict[Dimension, set] = {d: set() for d in order}
    inconsistent = False
    write_offs = {ld: k for (_, ld, k) in _access_offsets(eq.lhs, aligned)}
    for acc in collect_accesses(eq.rhs):
        if acc.func is not eq.lhs.func:
            continue
        read_offs = {ld: k for (_, ld, k) in _access_offsets(acc, aligned)}
        vector = []
        for dim in order:
            if dim in write_offs and dim in read_offs:
                w, r = write_offs[dim], read_offs[dim]
                if w is OPAQUE or r is OPAQUE:
                    vector.append(None)
                else:
                    vector.append(w - r)
            else:
                vector.append(0)
        for dim, dist in zip(order, vector):
            if dist is None:
                break
            if dist > 0:
                votes[dim].add(FORWARD)
                break
            if dist < 0:
                votes[dim].add(BACKWARD)
                break

    entries = []
    for dim in order:
        if eq.region == "interior" and dim.kind == "space":
            iv = Interval(dim, 1, -1)
        else:
            iv = Interval(dim, 0, 0)
        vs = votes.get(dim, set())
        if vs == {FORWARD}:
            direction = FORWARD
        elif vs == {BACKWARD}:
            direction = BACKWARD
        else:
            direction = ANY
            if len(vs) == 2:
                inconsistent = True
        entries.append((iv, direction))
    ispace = IterationSpace(tuple(entries))

    # Data space: per function, hull of offsets with halo credit on space
    # dims; stepping time wraps, so only the forward reach matters there.
    per_func: Dict[int, Tuple[FunctionDecl, Dict[Dimension, Interval]]] = {}
    for acc in accesses:
        decl = acc.func
        if decl.kind in ("coordinates", "temp"):
            continue
        slot = per_func.setdefault(id(decl), (decl, {}))[1]
        for dim, loop, k in _access_offsets(acc, aligned):
            if k is OPAQUE:
                if dim.kind == "conditional":
                    iv = Interval(dim, 0, 0)
                    slot[dim] = slot.get(dim, iv).hull(iv)
                continue
            if dim.kind == "space":
                lo = min(0, k + decl.halo)
                hi = max(0, k - decl.halo)
            elif dim.kind == "stepping":
                lo, hi = 0, max(0, k)
            else:
                lo, hi = min(0, k), max(0, k)
            iv = Interval(dim, lo, hi)
            slot[dim] = slot.get(dim, iv).hull(iv)
    parts = tuple((decl, tuple(slot[d] for d in decl.dims if d in slot))
                  for decl, slot in per_func.values())
    dspace = DataSpace(parts)

    return replace(eq, ispace=ispace, dspace=dspace,
                   direction_clash=inconsistent)


def lower(eq: Equation, subs: Optional[Dict[Expr, Expr]] = None) -> LoweredEq:
    """Full lowering chain: indexify, substitute, align, analyze."""
    low = indexify(eq)
    if subs:
        low = replace(low, lhs=Access(low.lhs.func,
                                      tuple(substitute(i, subs)
                                            for i in low.lhs.indices)),
                      rhs=substitute(low.rhs, subs))
    low = align_domain(low)
    return analyze(low)


def check_halo_coverage(eq: LoweredEq) -> None:
    """Every declared halo must cover the maximum stencil offset used."""
    for acc in [eq.lhs] + collect_accesses(eq.rhs):
        decl = acc.func
        if decl.kind not in ("function", "timefunction"):
            continue
        for dim, loop, k in _access_offsets(acc, aligned=True):
            if k is OPAQUE or dim.kind != "space":
                continue
            if abs(k) > decl.halo:
                raise LoweringError(
                    "halo %d of %s too small for offset %d along %s"
                    % (decl.halo, decl.name, k, dim.name))
