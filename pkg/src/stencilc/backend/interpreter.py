"""Execution of loop-nest trees over in-memory arrays.

``run`` interprets an optimized tree; ``reference_run`` executes the
unoptimized lowered equations directly, one loop nest per equation, and
serves as the differential-testing oracle. Both check every array access
against the allocated extents and fail hard on a violation.

Dense, guard-free statement bodies under parallel space loops execute as
whole-array slice operations; everything else (sparse scatter/gather,
guarded bodies, non-affine indices) falls back to a per-point evaluator.
A parallel loop may additionally be split into contiguous chunks across a
worker pool; chunking never changes which slice arithmetic runs per
point, so results are independent of the pool size.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from time import perf_counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..iet import (ATOMIC, PARALLEL, Block, Conditional, ExpressionStmt,
                   Iteration, Section, statements)
from ..lowering import BACKWARD, FORWARD, LoweredEq
from ..symbolic.expr import (Access, Add, Call, Constant, Expr, ExprError,
                             Mul, Pow, Symbol, evaluate, free_symbols)

DTYPES = {"f32": np.float32, "f64": np.float64}


class BackendError(ValueError):
    """Raised on malformed execution requests (unbound symbols, unsized
    temporaries, bad dtypes)."""


class BoundsError(IndexError):
    """Raised when any access falls outside the allocated extents."""


class _Fallback(Exception):
    """Internal: the sliced fast path cannot handle this body."""


@dataclass
class DataBuffer:
    """A zero-initialized row-major array backing one declared function."""

    name: str
    dtype: str
    extents: Tuple[int, ...]
    data: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise BackendError("bad dtype %r" % self.dtype)
        self.extents = tuple(int(e) for e in self.extents)
        if self.data is None:
            self.data = np.zeros(self.extents, DTYPES[self.dtype])
        elif tuple(self.data.shape) != self.extents:
            raise BackendError("data shape %r does not match extents %r"
                               % (self.data.shape, self.extents))


def allocate(decl, nt: Optional[int] = None, dtype: str = "f64") -> DataBuffer:
    return DataBuffer(decl.name, dtype, decl.storage_extents(nt))


@dataclass
class _Frame:
    """Per-worker execution state."""

    chunked: bool = False
    points: int = 0


def _temp_extents(decl, env) -> Tuple[int, ...]:
    span = getattr(decl, "span", None) or {}
    bshape = getattr(decl, "block_shape", None) or {}
    extents = []
    for d in decl.dims:
        if d.name in bshape:
            extents.append(bshape[d.name] + span.get(d.name, 0))
            continue
        upper = env.get(d.name + "_M")
        if upper is None:
            raise BackendError(
                "cannot size temporary %s: %s_M unbound" % (decl.name, d.name))
        extents.append(int(upper) + 1 + span.get(d.name, 0))
    return tuple(extents)


class _Interpreter:
    def __init__(self, buffers: Dict[str, DataBuffer], env: dict,
                 workers: int, report: dict):
        self.buffers = buffers
        self.env = env
        self.workers = max(1, int(workers))
        self.report = report
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 \
            else None
        self._vec_ok_cache: Dict[int, bool] = {}

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    # -- dispatch ------------------------------------------------------------

    def node(self, n, env, scalars, frame):
        if isinstance(n, (Block,)):
            for c in n.children:
                self.node(c, env, scalars, frame)
        elif isinstance(n, Section):
            t0 = perf_counter()
            p0 = frame.points
            for c in n.children:
                self.node(c, env, scalars, frame)
            slot = self.report.setdefault(n.name, {"time": 0.0, "points": 0})
            slot["time"] += perf_counter() - t0
            slot["points"] += frame.points - p0
        elif isinstance(n, Conditional):
            for g in n.guards:
                val = env.get(g.dim.name)
                if val is None:
                    raise BackendError("unbound guard symbol %r" % g.dim.name)
                if val % g.factor != 0:
                    return
            for c in n.children:
                self.node(c, env, scalars, frame)
        elif isinstance(n, Iteration):
            self.iteration(n, env, scalars, frame)
        elif isinstance(n, ExpressionStmt):
            self.point(n.eq, env, scalars, frame)
        else:
            raise BackendError("cannot execute node %r" % (n,))

    def _bound(self, e: Expr, env) -> int:
        try:
            return int(round(evaluate(e, env)))
        except ExprError as err:
            raise BackendError(str(err))

    def iteration(self, n: Iteration, env, scalars, frame):
        lo = self._bound(n.lower, env)
        hi = self._bound(n.upper, env)
        indices = list(range(lo, hi + 1, n.step))
        if n.direction == BACKWARD:
            indices.reverse()
        if not indices:
            return
        chunkable = (self.pool is not None and not frame.chunked and
                     PARALLEL in n.properties and
                     ATOMIC not in n.properties and
                     not n.dim.is_time and
                     n.direction != BACKWARD and len(indices) > 1)
        if chunkable:
            nparts = min(self.workers, len(indices))
            size = (len(indices) + nparts - 1) // nparts
            parts = [indices[i:i + size]
                     for i in range(0, len(indices), size)]
            frames = [_Frame(chunked=True) for _ in parts]
            futs = [self.pool.submit(self.run_part, n, part, dict(env),
                                     {}, fr)
                    for part, fr in zip(parts, frames)]
            for f in futs:
                f.result()
            frame.points += sum(fr.points for fr in frames)
        else:
            self.run_part(n, indices, env, scalars, frame)

    def run_part(self, n: Iteration, indices, env, scalars, frame):
        if n.step == 1 and n.direction != BACKWARD and self._vec_ok(n):
            try:
                self.vec_exec(n, indices[0], indices[-1], env, scalars, frame)
                return
            except _Fallback:
                pass
        name = n.dim.name
        for v in indices:
            env[name] = v
            for c in n.children:
                self.node(c, env, scalars, frame)

    # -- scalar path ---------------------------------------------------------

    def _scalar_access(self, env, scalars):
        def on_access(acc: Access):
            f = acc.func
            if f.kind == "temp" and not acc.indices:
                try:
                    return scalars[f.name]
                except KeyError:
                    raise BackendError("read of undefined scalar %s" % f.name)
            buf = self.buffer_of(f)
            idx = self.resolve_indices(acc, env, on_access)
            return buf.data[idx]
        return on_access

    def buffer_of(self, f) -> DataBuffer:
        try:
            return self.buffers[f.name]
        except KeyError:
            raise BackendError("no buffer for %s" % f.name)

    def resolve_indices(self, acc: Access, env, on_access) -> tuple:
        f = acc.func
        buf = self.buffers[f.name]
        idx = []
        for pos, i in enumerate(acc.indices):
            v = int(round(evaluate(i, env, on_access=on_access)))
            if pos == 0 and getattr(f, "is_modulo_time", False):
                v %= f.time_dim.modulo
            if not 0 <= v < buf.extents[pos]:
                raise BoundsError(
                    "%s index %d out of range [0, %d) along axis %d"
                    % (f.name, v, buf.extents[pos], pos))
            idx.append(v)
        return tuple(idx)

    def point(self, eq: LoweredEq, env, scalars, frame):
        on_access = self._scalar_access(env, scalars)
        try:
            val = evaluate(eq.rhs, env, on_access=on_access)
        except ExprError as err:
            raise BackendError(str(err))
        f = eq.lhs.func
        frame.points += 1
        if f.kind == "temp" and not eq.lhs.indices:
            scalars[f.name] = val
            return
        buf = self.buffer_of(f)
        idx = self.resolve_indices(eq.lhs, env, on_access)
        if eq.is_increment:
            buf.data[idx] += val
        else:
            buf.data[idx] = val

    # -- sliced fast path ----------------------------------------------------

    def _vec_ok(self, n: Iteration) -> bool:
        cached = self._vec_ok_cache.get(id(n))
        if cached is not None:
            return cached

        def usable(it):
            if it.dim.kind != "space" or PARALLEL not in it.properties or \
                    it.step != 1 or it.direction == BACKWARD:
                return False
            kids = it.children
            if kids and all(isinstance(k, ExpressionStmt) for k in kids):
                return True
            if len(kids) == 1 and isinstance(kids[0], Iteration):
                return usable(kids[0])
            return False

        ok = usable(n)
        self._vec_ok_cache[id(n)] = ok
        return ok

    def _vec_nest(self, n: Iteration, lo, hi, env):
        dims = [n.dim.name]
        ranges = [(lo, hi)]
        cur = n
        while not all(isinstance(k, ExpressionStmt) for k in cur.children):
            cur = cur.children[0]
            try:
                l = self._bound(cur.lower, env)
                h = self._bound(cur.upper, env)
            except BackendError:
                raise _Fallback
            dims.append(cur.dim.name)
            ranges.append((l, h))
        return dims, ranges, list(cur.children)

    def vec_exec(self, n: Iteration, lo, hi, env, scalars, frame):
        dims, ranges, stmts = self._vec_nest(n, lo, hi, env)
        if any(h < l for l, h in ranges):
            return
        npts = 1
        for l, h in ranges:
            npts *= h - l + 1
        vecscalars = {}
        plan = []
        for s in stmts:
            eq = s.eq
            f = eq.lhs.func
            if f.kind == "temp" and not eq.lhs.indices:
                plan.append((s, None, None))
                continue
            buf = self.buffer_of(f)
            slices, axes = self._vec_slices(eq.lhs, dims, ranges, env, scalars)
            if axes != list(range(len(dims))):
                raise _Fallback
            plan.append((s, buf, slices))
        for s, buf, slices in plan:
            eq = s.eq
            val = self.vec_eval(eq.rhs, dims, ranges, env, scalars, vecscalars)
            frame.points += npts
            if buf is None:
                vecscalars[eq.lhs.func.name] = val
                continue
            if eq.is_increment:
                buf.data[tuple(slices)] += val
            else:
                buf.data[tuple(slices)] = val

    def _vec_slices(self, acc: Access, dims, ranges, env, scalars):
        f = acc.func
        buf = self.buffer_of(f)
        vecnames = set(dims)
        parts = []
        axes = []
        for pos, idx in enumerate(acc.indices):
            used = free_symbols(idx) & vecnames
            if not used:
                try:
                    v = evaluate(idx, env,
                                 on_access=self._scalar_access(env, scalars))
                except (ExprError, BackendError, KeyError):
                    raise _Fallback
                v = int(round(v))
                if pos == 0 and getattr(f, "is_modulo_time", False):
                    v %= f.time_dim.modulo
                if not 0 <= v < buf.extents[pos]:
                    raise BoundsError(
                        "%s index %d out of range [0, %d) along axis %d"
                        % (f.name, v, buf.extents[pos], pos))
                parts.append(v)
                continue
            if len(used) > 1:
                raise _Fallback
            name = used.pop()
            k = dims.index(name)
            probe = dict(env)
            try:
                probe[name] = 0.0
                f0 = evaluate(idx, probe)
                probe[name] = 1.0
                f1 = evaluate(idx, probe)
            except ExprError:
                raise _Fallback
            if abs(f1 - f0 - 1.0) > 1e-9 or abs(f0 - round(f0)) > 1e-9:
                raise _Fallback
            off = int(round(f0))
            lo, hi = ranges[k]
            start, stop = lo + off, hi + off + 1
            if start < 0 or stop > buf.extents[pos]:
                raise BoundsError(
                    "%s slice [%d, %d) out of range [0, %d) along axis %d"
                    % (f.name, start, stop, buf.extents[pos], pos))
            parts.append(slice(start, stop))
            axes.append(k)
        if axes != sorted(axes):
            raise _Fallback
        return parts, axes

    def vec_eval(self, e: Expr, dims, ranges, env, scalars, vecscalars):
        if isinstance(e, Constant):
            return float(e.value)
        if isinstance(e, Symbol):
            if e.name in dims:
                raise _Fallback
            try:
                return float(env[e.name])
            except KeyError:
                raise _Fallback
        if isinstance(e, Access):
            f = e.func
            if f.kind == "temp" and not e.indices:
                if f.name in vecscalars:
                    return vecscalars[f.name]
                if f.name in scalars:
                    return scalars[f.name]
                raise _Fallback
            buf = self.buffer_of(f)
            parts, axes = self._vec_slices(e, dims, ranges, env, scalars)
            arr = buf.data[tuple(parts)]
            if not axes:
                return arr
            shape = [1] * len(dims)
            for k in axes:
                lo, hi = ranges[k]
                shape[k] = hi - lo + 1
            return arr.reshape(shape)
        rec = lambda c: self.vec_eval(c, dims, ranges, env, scalars,
                                      vecscalars)
        if isinstance(e, Add):
            out = rec(e.children[0])
            for c in e.children[1:]:
                out = out + rec(c)
            return out
        if isinstance(e, Mul):
            out = rec(e.children[0])
            for c in e.children[1:]:
                out = out * rec(c)
            return out
        if isinstance(e, Pow):
            return rec(e.base) ** e.exponent
        if isinstance(e, Call):
            args = [rec(a) for a in e.args]
            if e.name == "sin":
                return np.sin(args[0])
            if e.name == "cos":
                return np.cos(args[0])
            if e.name == "sqrt":
                return np.sqrt(args[0])
            if e.name == "floor":
                return np.floor(args[0])
            if e.name == "idiv":
                if any(isinstance(a, np.ndarray) for a in args):
                    raise _Fallback
                return float(int(args[0]) // int(args[1]))
            if e.name == "min":
                out = args[0]
                for a in args[1:]:
                    out = np.minimum(out, a)
                return out
            if e.name == "max":
                out = args[0]
                for a in args[1:]:
                    out = np.maximum(out, a)
                return out
        raise _Fallback


def run(iet, buffers: Dict[str, DataBuffer], params: dict,
        workers: int = 1) -> dict:
    """Execute an optimized tree in place over ``buffers``. Returns the
    profiling report: per-section elapsed time and executed-point count.
    Array temporaries get sized from the runtime bounds (block-local ones
    from their block shape plus producer span) and allocated on entry."""
    env = dict(params)
    dtype = next(iter(buffers.values())).dtype if buffers else "f64"
    for s in statements(iet):
        f = s.eq.lhs.func
        if f.kind == "temp" and s.eq.lhs.indices and f.name not in buffers:
            buffers[f.name] = DataBuffer(f.name, dtype,
                                         _temp_extents(f, env))
    report: dict = {}
    interp = _Interpreter(buffers, env, workers, report)
    try:
        interp.node(iet, env, {}, _Frame())
    finally:
        interp.close()
    return report


# -- Reference oracle --------------------------------------------------------


def _slice_overlap(a, b) -> bool:
    if isinstance(a, int) and isinstance(b, int):
        return a == b
    if isinstance(a, int):
        a = slice(a, a + 1)
    if isinstance(b, int):
        b = slice(b, b + 1)
    return a.start < b.stop and b.start < a.stop


def _eq_sweep(interp: _Interpreter, eq: LoweredEq, dims, ranges, env) -> bool:
    """Whole-array execution of one equation; returns False when the
    per-point path must be used instead. Safe only when the written region
    is disjoint from every read region of the same array."""
    if eq.lhs.func.kind not in ("function", "timefunction"):
        return False
    try:
        buf = interp.buffer_of(eq.lhs.func)
        wparts, waxes = interp._vec_slices(eq.lhs, dims, ranges, env, {})
        if waxes != list(range(len(dims))):
            return False
        from ..lowering import collect_accesses
        for acc in collect_accesses(eq.rhs):
            if acc.func is not eq.lhs.func:
                continue
            rparts, _ = interp._vec_slices(acc, dims, ranges, env, {})
            if all(_slice_overlap(w, r) for w, r in zip(wparts, rparts)):
                return False
        val = interp.vec_eval(eq.rhs, dims, ranges, env, {}, {})
    except _Fallback:
        return False
    if eq.is_increment:
        buf.data[tuple(wparts)] += val
    else:
        buf.data[tuple(wparts)] = val
    return True


def reference_run(eqs: Sequence[LoweredEq], buffers: Dict[str, DataBuffer],
                  params: dict) -> Dict[str, DataBuffer]:
    """Execute unoptimized lowered equations in program order, one loop
    nest per equation following its own iteration space; equations with a
    time dimension share a single outer time loop."""
    if not eqs:
        return buffers
    env = dict(params)
    interp = _Interpreter(buffers, env, 1, {})
    frame = _Frame()

    def exec_eq(eq: LoweredEq, tval):
        if tval is not None:
            for g in eq.guards:
                if tval % g.factor != 0:
                    return
            env[eq.ispace.dims[0].root.name] = tval
        dims = [d for d in eq.ispace.dims if not d.is_time]
        ranges = []
        for d in dims:
            iv = eq.ispace.interval_of(d)
            lo = env.get(d.name + "_m")
            hi = env.get(d.name + "_M")
            if lo is None or hi is None:
                raise BackendError("unbound bounds for %s" % d.name)
            ranges.append((int(lo) + iv.lower, int(hi) + iv.upper))
        if any(h < l for l, h in ranges):
            return
        names = [d.name for d in dims]
        if all(d.kind == "space" for d in dims) and \
                _eq_sweep(interp, eq, names, ranges, env):
            npts = 1
            for l, h in ranges:
                npts *= h - l + 1
            frame.points += npts
            return
        for point in itertools.product(*[range(l, h + 1) for l, h in ranges]):
            for d, v in zip(dims, point):
                env[d.name] = v
            interp.point(eq, env, {}, frame)

    has_time = [any(d.is_time for d in eq.ispace.dims) for eq in eqs]
    timed = [eq for eq, t in zip(eqs, has_time) if t]
    static = [eq for eq, t in zip(eqs, has_time) if not t]
    for eq in static:
        exec_eq(eq, None)
    if timed:
        t_m, t_M = int(env["t_m"]), int(env["t_M"])
        steps = range(t_m, t_M + 1)
        if any(eq.ispace.direction_of(d) == BACKWARD
               for eq in timed for d in eq.ispace.dims if d.is_time):
            steps = reversed(steps)
        for tval in steps:
            for eq in timed:
                exec_eq(eq, tval)
    interp.close()
    return buffers
