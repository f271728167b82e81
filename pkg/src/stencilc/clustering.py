"""Grouping of lowered equations into clusters.

A cluster is an ordered run of equations that share an iteration space and
guards and have no dimension-carried anti-dependence among them, so they
can later be scheduled into one loop nest. Grouping scans existing
clusters in reverse: a carried anti-dependence blocks the merge and marks
its causing dimensions atomic on the blocking cluster; a flow dependence
into an atomic dimension also stops the scan; otherwise the candidate may
skip over an incompatible predecessor, provided no loop-independent
dependence pins it behind that predecessor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

from .dependence import (ANTI, FLOW, OUTPUT, Dependence, detect_flow_directions,
                         get_dependences)
from .lowering import ANY, Guard, IterationSpace, LoweredEq
from .symbolic.grid import Dimension


@dataclass
class Cluster:
    eqs: List[LoweredEq]
    ispace: IterationSpace
    atomics: Set[Dimension] = field(default_factory=set)
    guards: Tuple[Guard, ...] = ()

    def __repr__(self):
        names = [eq.lhs.func.name for eq in self.eqs]
        g = " if " + ", ".join(g.predicate_repr() for g in self.guards) \
            if self.guards else ""
        return "<Cluster %s %r%s>" % ("+".join(names), self.ispace, g)


def enforce_directions(eqs: List[LoweredEq]) -> List[LoweredEq]:
    """Specialize per-equation Any directions using the directions required
    by inter-equation value flow. A genuine clash (both directions
    demanded) leaves each equation's local choice untouched; the clashing
    equations then end up in distinct loop nests."""
    deps = get_dependences(eqs)
    required = detect_flow_directions(deps)
    out = []
    for eq in eqs:
        updates: Dict[Dimension, str] = {}
        for dim in eq.ispace.dims:
            req = required.get(dim, set())
            if len(req) == 1:
                forced = next(iter(req))
                if eq.ispace.direction_of(dim) == ANY:
                    updates[dim] = forced
        if updates:
            from dataclasses import replace
            eq = replace(eq, ispace=eq.ispace.with_directions(updates))
        out.append(eq)
    return out


def _cross_deps(cluster: Cluster, eq: LoweredEq) -> List[Dependence]:
    deps = get_dependences(cluster.eqs + [eq])
    return [d for d in deps if (d.source is eq) != (d.sink is eq)]


def group(eqs: List[LoweredEq]) -> List[Cluster]:
    """Stable grouping by reverse scan over the clusters built so far."""
    clusters: List[Cluster] = []
    for eq in eqs:
        placed = False
        for c in reversed(clusters):
            cross = _cross_deps(c, eq)
            carried_anti = [d for d in cross
                            if d.kind == ANTI and d.is_carried]
            if carried_anti:
                c.atomics.update(d.cause for d in carried_anti)
                break
            flow_causes = {d.cause for d in cross
                           if d.kind == FLOW and d.is_carried}
            if flow_causes & c.atomics:
                break
            if c.guards != eq.guards:
                break  # conservative: never scan past a guard change
            if c.ispace == eq.ispace:
                c.eqs.append(eq)
                placed = True
                break
            # Skip over an incompatible predecessor only when nothing in
            # it must execute at the same iteration point before eq.
            if any(d.is_independent and d.kind in (FLOW, ANTI, OUTPUT)
                   for d in cross):
                break
        if not placed:
            clusters.append(Cluster([eq], eq.ispace, set(), eq.guards))
    return clusters


def apply_control_flow(clusters: List[Cluster]) -> List[Cluster]:
    """Lift equation-level guards to the owning cluster. Grouping never
    merges across differing guards, so members always agree."""
    out = []
    for c in clusters:
        guard_sets = {eq.guards for eq in c.eqs}
        if len(guard_sets) > 1:
            for eq in c.eqs:
                out.append(Cluster([eq], c.ispace, set(c.atomics), eq.guards))
            continue
        c.guards = c.eqs[0].guards
        out.append(c)
    return out


def clusterize(eqs: List[LoweredEq]) -> List[Cluster]:
    """Full pipeline: direction enforcement, grouping, control flow."""
    return apply_control_flow(group(enforce_directions(eqs)))
