"""Data-dependence analysis between lowered equations.

Distances are computed with the classic test for affine single-index
accesses: a pair of accesses ``A[d + k1]`` and ``A[d + k2]`` touches the
same element at iterations d1, d2 with d1 + k1 == d2 + k2, so the
dependence distance along ``d`` is k_source - k_sink. Non-affine indices
yield an unknown (None) entry. Dependences are normalized to run forward
in iteration order: a negative leading distance swaps source and sink and
flips flow with anti.

Mutual updates between increment equations on the same function are
classified as reductions rather than ordering constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .lowering import OPAQUE, LoweredEq, _access_offsets, collect_accesses
from .symbolic.expr import Access, free_symbols
from .symbolic.grid import Dimension, FunctionDecl

FLOW = "flow"
ANTI = "anti"
OUTPUT = "output"
REDUCTION = "reduction"

_FLIP = {FLOW: ANTI, ANTI: FLOW, OUTPUT: OUTPUT, REDUCTION: REDUCTION}


@dataclass(frozen=True)
class Dependence:
    source: LoweredEq
    sink: LoweredEq
    function: FunctionDecl
    kind: str
    dims: Tuple[Dimension, ...]
    distance: Tuple[Optional[int], ...]
    #: True when normalization reversed the program-order orientation
    flipped: bool = False

    @property
    def cause(self) -> Optional[Dimension]:
        """First dimension with nonzero or unknown distance; None when the
        dependence is loop-independent."""
        for dim, dist in zip(self.dims, self.distance):
            if dist is None or dist != 0:
                return dim
        return None

    @property
    def is_carried(self) -> bool:
        return self.cause is not None

    @property
    def is_independent(self) -> bool:
        return self.cause is None

    def distance_along(self, dim: Dimension) -> Optional[int]:
        for d, dist in zip(self.dims, self.distance):
            if d == dim:
                return dist
        return 0

    def __repr__(self):
        bits = ", ".join("%s:%s" % (d.name, "?" if v is None else v)
                         for d, v in zip(self.dims, self.distance))
        return "<%s on %s (%s)>" % (self.kind, self.function.name, bits)


def _reads_of(eq: LoweredEq) -> List[Access]:
    reads = collect_accesses(eq.rhs)
    for idx in eq.lhs.indices:
        reads.extend(collect_accesses(idx))
    if eq.is_increment:
        reads.append(eq.lhs)
    return reads


def _offsets_by_loop_dim(acc: Access) -> Tuple[Dict[Dimension, int], set]:
    """Affine offsets keyed by loop dimension, plus the set of loop-dim
    names referenced from non-affine indices."""
    affine: Dict[Dimension, int] = {}
    opaque_syms: set = set()
    for dim, loop, k in _access_offsets(acc, aligned=True):
        if k is OPAQUE:
            idx = acc.indices[list(acc.func.dims).index(dim)]
            opaque_syms |= free_symbols(idx)
        else:
            affine[loop] = k
    return affine, opaque_syms


def lamport_distance(src: Access, snk: Access,
                     dims: Tuple[Dimension, ...]) -> Tuple[Optional[int], ...]:
    """Distance vector of a dependence from ``src`` to ``snk`` over the
    given loop dimensions; None marks an unknown entry."""
    src_aff, src_opq = _offsets_by_loop_dim(src)
    snk_aff, snk_opq = _offsets_by_loop_dim(snk)
    out = []
    for d in dims:
        if d in src_aff and d in snk_aff:
            out.append(src_aff[d] - snk_aff[d])
        elif d.name in src_opq or d.name in snk_opq or \
                (d in src_aff) != (d in snk_aff):
            out.append(None)
        else:
            out.append(0)
    return tuple(out)


def _union_dims(a: LoweredEq, b: LoweredEq) -> Tuple[Dimension, ...]:
    dims = list(a.ispace.dims)
    for d in b.ispace.dims:
        if d not in dims:
            dims.append(d)
    return tuple(dims)


def _normalize(dep: Dependence) -> Optional[Dependence]:
    for dist in dep.distance:
        if dist is None:
            return dep
        if dist > 0:
            return dep
        if dist < 0:
            negated = tuple(None if v is None else -v for v in dep.distance)
            return Dependence(dep.sink, dep.source, dep.function,
                              _FLIP[dep.kind], dep.dims, negated,
                              flipped=True)
    # All-zero self dependences carry no constraint
    if dep.source is dep.sink and dep.kind != REDUCTION:
        return None
    return dep


def get_dependences(eqs: List[LoweredEq]) -> List[Dependence]:
    """All pairwise dependences in program order, normalized so that every
    known leading distance is non-negative."""
    for eq in eqs:
        if eq.ispace is None:
            raise ValueError("equation %r has not been analyzed" % (eq,))
    deps: List[Dependence] = []
    # dedup by equation identity: value-equal duplicate statements still
    # carry distinct dependences
    seen = set()
    n = len(eqs)
    for i in range(n):
        for j in range(i, n):
            ei, ej = eqs[i], eqs[j]
            dims = _union_dims(ei, ej)

            def emit(src_acc, snk_acc, src_eq, snk_eq, kind):
                if src_acc.func is not snk_acc.func:
                    return
                if src_eq.is_increment and snk_eq.is_increment and kind != FLOW:
                    return  # one reduction record per pair is enough
                if src_eq.is_increment and snk_eq.is_increment:
                    kind = REDUCTION
                dist = lamport_distance(src_acc, snk_acc, dims)
                dep = _normalize(Dependence(src_eq, snk_eq, src_acc.func,
                                            kind, dims, dist))
                if dep is None:
                    return
                key = (id(dep.source), id(dep.sink), dep.function.name,
                       dep.kind, dep.distance, dep.flipped)
                if key not in seen:
                    seen.add(key)
                    deps.append(dep)

            for r in _reads_of(ej):
                emit(ei.lhs, r, ei, ej, FLOW)
            if i != j:
                for r in _reads_of(ei):
                    emit(r, ej.lhs, ei, ej, ANTI)
                emit(ei.lhs, ej.lhs, ei, ej, OUTPUT)
    return deps


def detect_flow_directions(deps: List[Dependence]) -> Dict[Dimension, set]:
    """Directions required so every value flows from its producer to its
    consumers: {dim: set of '+'/'-'} over the causing dimensions. A flow
    dependence that ran backward in program order (flipped to anti during
    normalization) demands a backward loop."""
    from .lowering import BACKWARD, FORWARD
    out: Dict[Dimension, set] = {}
    for dep in deps:
        cause = dep.cause
        if cause is None:
            continue
        dist = dep.distance_along(cause)
        if dist is None:
            continue
        if dep.kind == FLOW and not dep.flipped:
            out.setdefault(cause, set()).add(FORWARD)
        elif dep.kind == ANTI and dep.flipped:
            out.setdefault(cause, set()).add(BACKWARD)
    return out
