"""Operation-count-reducing cluster rewrites.

Passes: structural common sub-expression elimination, recursive
coefficient factorization, extraction of expensive sub-expressions into
temporaries, detection of cross-iteration redundancies (aliases: the same
computation repeated at translated iteration points), pivot construction,
and array contraction. Composed into three modes:

  basic      -> CSE only
  advanced   -> basic + factorization + time-invariant extraction/aliases
  aggressive -> advanced + time-varying extraction/aliases

Costs are floating-point operation counts; transcendental calls weigh
tens of operations, so hoisting them out of the time loop dominates the
advanced-mode wins.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .clustering import Cluster
from .lowering import Interval, IterationSpace, LoweredEq, affine_offset
from .symbolic.expr import (Access, Add, Call, Constant, Expr, Mul, Pow,
                            Symbol, _as_coeff_term, _sort_key, add,
                            children_of, mul, num, op_count, pow_, rebuild)
from .symbolic.grid import Dimension, FunctionDecl

#: Extraction threshold: sub-expressions costing at least this many
#: floating-point operations are candidates for hoisting.
EXTRACT_THRESHOLD = 11

MODES = ("basic", "advanced", "aggressive")

TIME_INVARIANT = "time-invariant"
TIME_VARYING = "time-varying"


class Namer:
    """Deterministic temp-name generator shared across passes."""

    def __init__(self, prefix: str = "temp"):
        self.prefix = prefix
        self.counter = 0

    def __call__(self) -> str:
        name = "%s%d" % (self.prefix, self.counter)
        self.counter += 1
        return name


@dataclass
class Temp:
    """Bookkeeping record for a generated temporary."""

    decl: FunctionDecl
    kind: str  # scalar | array
    definition: Expr
    time_varying: bool
    span: Dict[str, int] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.decl.name


def _grid_of(cluster: Cluster):
    return cluster.eqs[0].lhs.func.grid


def is_time_varying(e: Expr) -> bool:
    """True when evaluating ``e`` reads data that changes over timesteps."""
    if isinstance(e, Access):
        f = e.func
        if f.kind in ("timefunction", "sparsetimefunction"):
            return True
        if f.kind == "temp" and getattr(f, "time_varying", False):
            return True
        return False
    return any(is_time_varying(c) for c in children_of(e))


def _walk_skip_indices(e: Expr):
    """Postorder over ``e`` treating Access nodes as leaves: integer index
    arithmetic is never a rewrite target."""
    if not isinstance(e, Access):
        for c in children_of(e):
            yield from _walk_skip_indices(c)
    yield e


def replace_subtrees(e: Expr, rules: Dict[Expr, Expr]) -> Expr:
    """Structural replacement that does not descend into Access indices."""
    if e in rules:
        return rules[e]
    if isinstance(e, Access):
        return e
    kids = children_of(e)
    if not kids:
        return e
    new = [replace_subtrees(c, rules) for c in kids]
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def _make_temp(name: str, grid, dims: Tuple[Dimension, ...],
               definition: Expr, span: Optional[Dict[str, int]] = None
               ) -> FunctionDecl:
    decl = FunctionDecl(name, "temp", grid, dims=dims)
    decl.time_varying = is_time_varying(definition)
    decl.span = dict(span or {})
    return decl


def _order_defs(defs: List[LoweredEq]) -> List[LoweredEq]:
    """Topologically order temp definitions so every temp is defined
    before its first read. Temps defined in other clusters impose no
    ordering here."""
    local = {eq.lhs.func.name for eq in defs}
    remaining = list(defs)
    placed: List[LoweredEq] = []
    done: set = set()
    while remaining:
        for eq in remaining:
            needs = {a.func.name for a in _accesses(eq.rhs)
                     if a.func.kind == "temp" and a.func.name in local}
            if needs <= done:
                placed.append(eq)
                done.add(eq.lhs.func.name)
                remaining.remove(eq)
                break
        else:
            raise ValueError("cyclic temp definitions")
    return placed


def _accesses(e: Expr) -> List[Access]:
    out = []
    for n in _walk_skip_indices(e):
        if isinstance(n, Access):
            out.append(n)
    return out


def _split_defs(cluster: Cluster):
    defs = [eq for eq in cluster.eqs if eq.lhs.func.kind == "temp"]
    mains = [eq for eq in cluster.eqs if eq.lhs.func.kind != "temp"]
    return defs, mains


# -- Common sub-expression elimination ---------------------------------------


def cse(cluster: Cluster, namer: Optional[Namer] = None) -> Cluster:
    """Hoist repeated compound sub-expressions into scalar temps, smallest
    first so nested redundancies chain naturally. Index arithmetic is
    invisible to the search."""
    namer = namer or Namer()
    defs, mains = _split_defs(cluster)
    exprs = [eq.rhs for eq in defs + mains]
    new_defs: List[LoweredEq] = []
    grid = _grid_of(cluster)
    while True:
        counts: Counter = Counter()
        for e in exprs + [d.rhs for d in new_defs]:
            for node in _walk_skip_indices(e):
                if not isinstance(node, (Constant, Symbol, Access)) and \
                        op_count(node) >= 1:
                    counts[node] += 1
        repeated = [n for n, c in counts.items() if c >= 2]
        if not repeated:
            break
        pick = min(repeated, key=lambda n: (op_count(n), _sort_key(n)))
        decl = _make_temp(namer(), grid, (), pick)
        rule = {pick: Access(decl, ())}
        exprs = [replace_subtrees(e, rule) for e in exprs]
        new_defs = [replace(d, rhs=replace_subtrees(d.rhs, rule))
                    for d in new_defs]
        new_defs.append(LoweredEq(Access(decl, ()), pick,
                                  ispace=cluster.ispace))
    rewritten = []
    for eq, e in zip(defs + mains, exprs):
        rewritten.append(eq if e is eq.rhs else replace(eq, rhs=e))
    out_defs = _order_defs([r for r in rewritten[:len(defs)]] + new_defs)
    return Cluster(out_defs + rewritten[len(defs):], cluster.ispace,
                   set(cluster.atomics), cluster.guards)


# -- Factorization -----------------------------------------------------------


def _factors_of(term: Expr) -> Dict[Expr, int]:
    if isinstance(term, Mul):
        out: Dict[Expr, int] = {}
        for c in term.children:
            if isinstance(c, Pow):
                out[c.base] = out.get(c.base, 0) + c.exponent
            else:
                out[c] = out.get(c, 0) + 1
        return out
    if isinstance(term, Pow):
        return {term.base: term.exponent}
    return {term: 1}


def _common_factors(terms: List[Expr]) -> Dict[Expr, int]:
    maps = [_factors_of(t) for t in terms]
    common: Dict[Expr, int] = {}
    for base, exp in maps[0].items():
        exps = [m.get(base, 0) for m in maps]
        if all(e > 0 for e in exps):
            common[base] = min(exps)
        elif all(e < 0 for e in exps):
            common[base] = max(exps)
    return common


def _strip_factors(term: Expr, common: Dict[Expr, int]) -> Expr:
    left = dict(_factors_of(term))
    for base, exp in common.items():
        left[base] = left.get(base, 0) - exp
    return mul(*[pow_(b, e) for b, e in left.items() if e != 0])


def factorize(e: Expr) -> Expr:
    """Collect common numeric coefficients (and their shared symbolic
    factors) across the children of every Add node, leaves first, without
    expanding products. Never increases the operation count."""
    if isinstance(e, Access):
        return e
    kids = children_of(e)
    inner = rebuild(e, [factorize(c) for c in kids]) if kids else e
    if not isinstance(inner, Add):
        return inner
    groups: Dict[object, List[Expr]] = {}
    order: List[object] = []
    for child in inner.children:
        coeff, term = _as_coeff_term(child)
        if coeff not in groups:
            groups[coeff] = []
            order.append(coeff)
        groups[coeff].append(term)
    new_children = []
    for coeff in order:
        terms = groups[coeff]
        if len(terms) < 2:
            new_children.append(mul(Constant(coeff), terms[0]))
            continue
        common = _common_factors(terms)
        residual = add(*[_strip_factors(t, common) for t in terms])
        new_children.append(mul(Constant(coeff),
                                *[pow_(b, x) for b, x in common.items()],
                                residual))
    cand = add(*new_children)
    return cand if op_count(cand) <= op_count(inner) else inner


def factorize_cluster(cluster: Cluster) -> Cluster:
    eqs = [replace(eq, rhs=factorize(eq.rhs)) for eq in cluster.eqs]
    return Cluster(eqs, cluster.ispace, set(cluster.atomics), cluster.guards)


# -- Extraction --------------------------------------------------------------


def _is_pure_varying_operand(term: Expr) -> bool:
    """An alias-candidate operand: scalar coefficients (numbers, spacing
    or step symbols) times at least one time-varying indexed object.
    Time-invariant accesses disqualify: they belong to the invariant
    hoisting pass instead."""
    factors = _factors_of(term)
    if not factors:
        return False
    has_varying = False
    for base in factors:
        if isinstance(base, Access) and is_time_varying(base):
            has_varying = True
        elif isinstance(base, (Symbol, Constant)):
            continue
        else:
            return False
    return has_varying


def _qualifies(e: Expr, klass: str, threshold: int) -> bool:
    if isinstance(e, (Constant, Symbol, Access)):
        return False
    if op_count(e) < threshold:
        return False
    if klass == TIME_INVARIANT:
        return not is_time_varying(e)
    # Time-varying candidates keep the shape alias detection understands:
    # a sum whose addends are coefficient times time-varying accesses.
    addends = e.children if isinstance(e, Add) else (e,)
    for a in addends:
        coeff, term = _as_coeff_term(a)
        if not _is_pure_varying_operand(term):
            return False
    return True


def _find_candidates(e: Expr, klass: str, threshold: int,
                     is_root: bool = True) -> List[Expr]:
    """Maximal qualifying sub-expressions, scanned top-down. The root
    itself is never a candidate: replacing a whole right-hand side buys
    nothing."""
    if isinstance(e, Access):
        return []
    if not is_root and _qualifies(e, klass, threshold):
        return [e]
    out = []
    for c in children_of(e):
        out.extend(_find_candidates(c, klass, threshold, is_root=False))
    return out


def _temp_dims(e: Expr, cluster: Cluster) -> Tuple[Dimension, ...]:
    """Loop dimensions a temp for ``e`` must be stored along: the non-time
    iteration dimensions its value depends on."""
    from .symbolic.expr import free_symbols
    free = free_symbols(e)
    out = []
    for iv, _ in cluster.ispace.entries:
        d = iv.dim
        if not d.is_time and d.name in free:
            out.append(d)
    return tuple(out)


def extract(cluster: Cluster, klass: str,
            threshold: int = EXTRACT_THRESHOLD,
            namer: Optional[Namer] = None) -> Cluster:
    """Pull maximal expensive sub-expressions of the given class out into
    temps read at offset zero. Array temps are used when the value varies
    along space dimensions, letting scheduling hoist time-invariant
    definitions out of the time loop."""
    namer = namer or Namer()
    grid = _grid_of(cluster)
    defs, mains = _split_defs(cluster)
    new_defs: List[LoweredEq] = []
    rules: Dict[Expr, Expr] = {}
    for eq in mains:
        for cand in _find_candidates(eq.rhs, klass, threshold):
            if cand in rules:
                continue
            dims = _temp_dims(cand, cluster)
            decl = _make_temp(namer(), grid, dims, cand)
            read = Access(decl, tuple(d.symbol for d in dims))
            rules[cand] = read
            new_defs.append(LoweredEq(read, cand, ispace=cluster.ispace))
    if not rules:
        return cluster
    mains = [replace(eq, rhs=replace_subtrees(eq.rhs, rules))
             for eq in mains]
    return Cluster(_order_defs(defs + new_defs) + mains, cluster.ispace,
                   set(cluster.atomics), cluster.guards)


# -- Alias detection ---------------------------------------------------------


@dataclass
class AliasGroup:
    members: List[Expr]
    #: per-member translation vectors relative to the pivot (dim name -> k)
    translations: List[Dict[str, int]]
    pivot: Expr
    #: maximal translation per dimension (minimum is normalized to zero)
    span: Dict[str, int]


def _time_dim_names(e: Expr) -> set:
    out = set()
    for acc in _accesses(e):
        for dim in acc.func.dims:
            if dim.is_time:
                out.add(dim.root.name)
    return out


def _displacements(e: Expr) -> Optional[List[Dict[str, int]]]:
    """One displacement vector per indexed object, in traversal order;
    None when any index is not a pure dimension-plus-offset."""
    from .lowering import OPAQUE
    out = []
    for acc in _accesses(e):
        disp: Dict[str, int] = {}
        for dim, idx in zip(acc.func.dims, acc.indices):
            sym = Symbol(dim.root.name) \
                if dim.kind in ("stepping", "conditional") else dim.symbol
            try:
                k = affine_offset(idx, sym, None)
            except Exception:
                return None
            if k is OPAQUE:
                return None
            disp[dim.root.name] = k
        out.append(disp)
    return out


def _skeleton(e: Expr) -> Expr:
    """``e`` with every access displacement zeroed: equal skeletons mean
    the same operators over the same-shaped operands."""
    if isinstance(e, Access):
        new_idx = []
        for dim, idx in zip(e.func.dims, e.indices):
            sym = Symbol(dim.root.name) \
                if dim.kind in ("stepping", "conditional") else dim.symbol
            new_idx.append(sym)
        return Access(e.func, tuple(new_idx))
    kids = children_of(e)
    if not kids:
        return e
    return rebuild(e, [_skeleton(c) for c in kids])


def compare_ops(e1: Expr, e2: Expr) -> bool:
    return _skeleton(e1) == _skeleton(e2)


def is_translated(d1: List[Dict[str, int]],
                  d2: List[Dict[str, int]]) -> bool:
    """True when every displacement vector in d2 is the corresponding
    vector in d1 shifted by one common translation."""
    if len(d1) != len(d2):
        return False
    shift: Dict[str, int] = {}
    for a, b in zip(d1, d2):
        if set(a) != set(b):
            return False
        for dim in a:
            delta = b[dim] - a[dim]
            if dim in shift and shift[dim] != delta:
                return False
            shift[dim] = delta
    return True


def translate(e: Expr, shift: Dict[str, int]) -> Expr:
    """Shift every affine access index along the given loop dimensions."""
    if isinstance(e, Access):
        new_idx = []
        for dim, idx in zip(e.func.dims, e.indices):
            k = shift.get(dim.root.name, 0)
            new_idx.append(add(idx, num(k)) if k else idx)
        return Access(e.func, tuple(new_idx))
    kids = children_of(e)
    if not kids:
        return e
    return rebuild(e, [translate(c, shift) for c in kids])


def detect_aliases(candidates: List[Expr]) -> List[AliasGroup]:
    """Partition candidates into equivalence classes of mutually
    translated expressions. The pivot of each class is translated so its
    smallest access displacement per space dimension is zero; members then
    read the pivot temp at non-negative offsets."""
    disp = {id(c): _displacements(c) for c in candidates}
    unseen = list(candidates)
    groups: List[AliasGroup] = []
    while unseen:
        top = unseen.pop(0)
        members = [top]
        rel: List[Dict[str, int]] = [{}]
        if disp[id(top)] is not None:
            for e in list(unseen):
                de = disp[id(e)]
                if de is None:
                    continue
                if compare_ops(top, e) and is_translated(disp[id(top)], de):
                    shift: Dict[str, int] = {}
                    for a, b in zip(disp[id(top)], de):
                        for dim in a:
                            shift[dim] = b[dim] - a[dim]
                    members.append(e)
                    rel.append(shift)
                    unseen.remove(e)
        # Pivot origin: zero out the smallest displacement found in the
        # representative, except along time dimensions.
        base = {}
        if disp[id(top)] is not None:
            times = _time_dim_names(top)
            for vec in disp[id(top)]:
                for d, k in vec.items():
                    if d not in times:
                        base[d] = min(base.get(d, k), k)
        dims = sorted({d for s in rel for d in s} | set(base))
        translations = [{d: s.get(d, 0) + base.get(d, 0) for d in dims}
                        for s in rel]
        pivot = translate(top, {d: -m for d, m in base.items() if m})
        span = {d: max(s.get(d, 0) for s in translations) for d in dims}
        groups.append(AliasGroup(members, translations, pivot, span))
    return groups


# -- Pivot selection and CIRE ------------------------------------------------


def _producer_ispace(cluster: Cluster, dims: Tuple[Dimension, ...],
                     span: Dict[str, int],
                     keep_time: bool) -> IterationSpace:
    entries = []
    for iv, direction in cluster.ispace.entries:
        d = iv.dim
        if d.is_time:
            if keep_time:
                entries.append(((iv, direction)))
            continue
        if d in dims:
            entries.append((Interval(d, iv.lower,
                                     iv.upper + span.get(d.name, 0)),
                            direction))
    return IterationSpace(tuple(entries))


def select_pivots(groups: List[AliasGroup], cluster: Cluster,
                  namer: Optional[Namer] = None,
                  always: bool = False):
    """Turn alias groups into array temps plus rewrite rules for the
    consumer expressions. Single-member groups stay inline unless
    ``always`` (used for time-invariant hoisting). All producers of one
    consumer cluster share a hulled iteration space so they land in a
    single loop nest."""
    namer = namer or Namer()
    grid = _grid_of(cluster)
    def usable(g: AliasGroup) -> bool:
        times = _time_dim_names(g.pivot)
        return not any(t.get(d) for t in g.translations for d in times)

    chosen = [g for g in groups if usable(g) and
              (len(g.members) >= 2 or
               (always and _temp_dims(g.pivot, cluster)))]
    if not chosen:
        return [], {}, []
    hull: Dict[str, int] = {}
    for g in chosen:
        for d, s in g.span.items():
            hull[d] = max(hull.get(d, 0), s)
    defs: List[LoweredEq] = []
    rules: Dict[Expr, Expr] = {}
    temps: List[Temp] = []
    for g in chosen:
        dims = _temp_dims(g.pivot, cluster)
        keep_time = is_time_varying(g.pivot)
        decl = _make_temp(namer(), grid, dims, g.pivot, span=hull)
        ispace = _producer_ispace(cluster, dims, hull, keep_time)
        defs.append(LoweredEq(Access(decl, tuple(d.symbol for d in dims)),
                              g.pivot, ispace=ispace))
        temps.append(Temp(decl, "array" if dims else "scalar", g.pivot,
                          keep_time, dict(hull)))
        for member, tr in zip(g.members, g.translations):
            idx = tuple(add(d.symbol, num(tr.get(d.name, 0)))
                        for d in dims)
            rules[member] = Access(decl, idx)
    return defs, rules, temps


def _cire(clusters: List[Cluster], klass: str, threshold: int,
          namer: Namer) -> List[Cluster]:
    """One extraction + alias-detection + pivot round over all clusters."""
    front: List[Cluster] = []
    out: List[Cluster] = []
    for c in clusters:
        candidates = []
        seen = set()
        for eq in c.eqs:
            for cand in _find_candidates(eq.rhs, klass, threshold):
                if cand not in seen:
                    seen.add(cand)
                    candidates.append(cand)
        if not candidates:
            out.append(c)
            continue
        groups = detect_aliases(candidates)
        defs, rules, _ = select_pivots(groups, c, namer,
                                       always=(klass == TIME_INVARIANT))
        if not rules:
            out.append(c)
            continue
        new_eqs = [replace(eq, rhs=replace_subtrees(eq.rhs, rules))
                   for eq in c.eqs]
        consumer = Cluster(new_eqs, c.ispace, set(c.atomics), c.guards)
        by_ispace: Dict[IterationSpace, List[LoweredEq]] = {}
        for d in defs:
            by_ispace.setdefault(d.ispace, []).append(d)
        producers = [Cluster(eqs, ispace, set(), ())
                     for ispace, eqs in by_ispace.items()]
        for p in producers:
            if any(eq.lhs.func.time_varying for eq in p.eqs):
                p.guards = c.guards
                out.append(p)
            else:
                front.append(p)
        out.append(consumer)
    merged_front: List[Cluster] = []
    for p in front:
        for q in merged_front:
            if q.ispace == p.ispace and q.guards == p.guards:
                q.eqs.extend(p.eqs)
                break
        else:
            merged_front.append(p)
    return merged_front + out


# -- Array contraction -------------------------------------------------------


def contract_arrays(clusters: List[Cluster]) -> List[Cluster]:
    """Demote array temps to scalars when producer and consumers can live
    in the same loop nest at zero translation: the stored plane would
    never be read outside the defining iteration."""
    out = list(clusters)
    i = 0
    while i < len(out) - 1:
        prod, cons = out[i], out[i + 1]
        prod_temps = [eq.lhs.func for eq in prod.eqs
                      if eq.lhs.func.kind == "temp" and eq.lhs.indices]
        if not prod_temps:
            i += 1
            continue
        names = {t.name for t in prod_temps}
        # Consumers elsewhere, nonzero spans, or a different nest shape
        # all force materialized storage.
        consumers = []
        for j, c in enumerate(out):
            if j == i:
                continue
            for eq in c.eqs:
                if any(a.func.name in names for a in _accesses(eq.rhs)):
                    consumers.append(j)
                    break
        contractable = (
            consumers == [i + 1] and
            prod.ispace == cons.ispace and
            prod.guards == cons.guards and
            all(all(s == 0 for s in t.span.values()) for t in prod_temps))
        if contractable:
            rules = {}
            for t in prod_temps:
                scalar = _make_temp(t.name, t.grid, (),
                                    num(0))
                scalar.time_varying = t.time_varying
                scalar.span = {}
                for eq in prod.eqs:
                    if eq.lhs.func is t:
                        scalar.time_varying = is_time_varying(eq.rhs)
                rules[t.name] = scalar
            def demote(e):
                if isinstance(e, Access) and e.func.name in rules and \
                        e.func.kind == "temp":
                    return Access(rules[e.func.name], ())
                kids = children_of(e)
                if not kids or isinstance(e, Access):
                    return e
                return rebuild(e, [demote(c) for c in kids])
            new_defs = [replace(eq, lhs=demote(eq.lhs), rhs=demote(eq.rhs),
                                ispace=cons.ispace)
                        for eq in prod.eqs]
            new_mains = [replace(eq, rhs=demote(eq.rhs)) for eq in cons.eqs]
            out[i:i + 2] = [Cluster(new_defs + new_mains, cons.ispace,
                                    set(cons.atomics), cons.guards)]
        else:
            i += 1
    return out


# -- Driver ------------------------------------------------------------------


def run_dse(clusters: List[Cluster], mode: str = "advanced",
            threshold: int = EXTRACT_THRESHOLD) -> List[Cluster]:
    if mode not in MODES:
        raise ValueError("unknown optimization mode %r" % mode)
    if not clusters:
        return []
    namer = Namer()
    out = list(clusters)
    if mode in ("advanced", "aggressive"):
        out = _cire(out, TIME_INVARIANT, threshold, namer)
    if mode == "aggressive":
        out = _cire(out, TIME_VARYING, threshold, namer)
    out = [cse(c, namer) for c in out]
    if mode in ("advanced", "aggressive"):
        out = [factorize_cluster(c) for c in out]
        out = contract_arrays(out)
    return out


def cluster_op_count(clusters: List[Cluster]) -> int:
    """Flat operation count over all cluster expressions; definitions in
    time-invariant producer clusters are counted once like everything
    else."""
    return sum(op_count(eq.rhs) for c in clusters for eq in c.eqs)
