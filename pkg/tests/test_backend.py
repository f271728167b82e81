"""Backend tests: buffer allocation, interpreter vs reference oracle,
default-bound derivation, worker independence, C emission, caching."""

import numpy as np
import pytest

from stencilc.backend import (BackendError, BoundsError, DataBuffer,
                              Operator, allocate, clear_cache, emit_c,
                              reference_run, run)
from stencilc.backend import operator as op_mod
from stencilc.iet import Block

from helpers import acoustic_example, wave_example

DT = 0.02


def _fill(buffers, name, value):
    buffers[name].data[:] = value


def _impulse(buffers, name="src"):
    buffers[name].data[0, 0] = 1.0


def _acoustic_op(shape, so=2, mode="advanced", block=None):
    funcs, eqs = acoustic_example(shape, so=so)
    return Operator(eqs, mode=mode, block=block)


def _run_pair(shape, so, mode, block, steps=20):
    op = _acoustic_op(shape, so=so, mode=mode, block=block)
    bufs, _ = _fixture_apply(op, steps)
    ref_op = _acoustic_op(shape, so=so, mode=mode, block=block)
    refs = ref_op.allocate(steps)
    _fill(refs, "m", 1.5)
    _impulse(refs)
    ref_op.reference(steps=steps, buffers=refs, dt=DT)
    return bufs, refs


def _fixture_apply(op, steps, workers=1):
    bufs = op.allocate(steps)
    _fill(bufs, "m", 1.5)
    _impulse(bufs)
    report = op.apply(steps=steps, buffers=bufs, workers=workers, dt=DT)[1]
    return bufs, report


def _assert_close(a, b, rel=1e-12):
    scale = max(1.0, float(np.max(np.abs(b))))
    assert float(np.max(np.abs(a - b))) <= rel * scale


class TestDataBuffer:
    def test_zero_initialized(self):
        buf = DataBuffer("u", "f64", (3, 5))
        assert buf.data.shape == (3, 5)
        assert buf.data.dtype == np.float64
        assert not buf.data.any()

    def test_bad_dtype(self):
        with pytest.raises(BackendError):
            DataBuffer("u", "f16", (3,))

    def test_allocate_from_decl(self):
        funcs, _ = wave_example(shape=(11,), so=4)
        buf = allocate(funcs["u"])
        assert buf.extents == (3, 11 + 2 * 2)
        cbuf = allocate(funcs["q"], nt=7)
        assert cbuf.extents == (7, 1)

    def test_shape_mismatch(self):
        with pytest.raises(BackendError):
            DataBuffer("u", "f64", (3,), data=np.zeros((4,)))


class TestInterpreter:
    def test_zero_data_stays_zero(self):
        op = _acoustic_op((21,))
        bufs = op.allocate(10)
        _fill(bufs, "m", 1.0)
        op.apply(steps=10, buffers=bufs, dt=DT)
        assert not bufs["u"].data.any()
        assert not bufs["rec"].data.any()

    def test_impulse_response(self):
        # One step with a unit impulse at a node: the update contributes
        # nothing from the zero field, injection adds dt^2 / m there.
        funcs, eqs = acoustic_example((11,), so=2, src_coord=(5.0,))
        op = Operator(eqs)
        bufs = op.allocate(1)
        _fill(bufs, "m", 1.0)
        _impulse(bufs)
        op.apply(steps=1, buffers=bufs, dt=DT)
        halo = funcs["u"].halo
        u = bufs["u"].data
        assert u[1, 5 + halo] == pytest.approx(DT ** 2, rel=1e-15)
        mask = np.ones_like(u, dtype=bool)
        mask[1, 5 + halo] = False
        assert not u[mask].any()

    def test_differential_modes_1d(self):
        for mode in ("basic", "advanced", "aggressive"):
            for block in (None, {"x": 8}):
                bufs, refs = _run_pair((65,), 2, mode, block)
                _assert_close(bufs["u"].data, refs["u"].data)
                _assert_close(bufs["rec"].data, refs["rec"].data)

    def test_differential_2d_blocked(self):
        bufs, refs = _run_pair((24, 24), 4, "aggressive", {"x": 8, "y": 8})
        _assert_close(bufs["u"].data, refs["u"].data)
        _assert_close(bufs["rec"].data, refs["rec"].data)

    def test_snapshot_subsampling(self):
        funcs, eqs = wave_example(shape=(21,), so=2, factor=4, save=5,
                                  coordinates=((10.0,),))
        op = Operator(eqs)
        steps = 17
        bufs = op.allocate(steps)
        _fill(bufs, "m", 1.0)
        bufs["q"].data[0, 0] = 1.0
        op.apply(steps=steps, buffers=bufs, dt=DT)
        refs = Operator(eqs).allocate(steps)
        _fill(refs, "m", 1.0)
        refs["q"].data[0, 0] = 1.0
        op.reference(steps=steps, buffers=refs, dt=DT)
        _assert_close(bufs["u"].data, refs["u"].data)
        _assert_close(bufs["us"].data, refs["us"].data)
        assert bufs["us"].data.any()

    def test_report_sections(self):
        op = _acoustic_op((33,))
        _, report = _fixture_apply(op, 5)
        assert report
        for name, slot in report.items():
            assert name.startswith("section")
            assert slot["points"] > 0
            assert slot["time"] >= 0.0

    def test_unbound_symbol(self):
        op = _acoustic_op((21,))
        bufs = op.allocate(3)
        _fill(bufs, "m", 1.0)
        env = op.default_params(3)  # no dt
        with pytest.raises(BackendError):
            run(op.iet, bufs, env)

    def test_bounds_checker_fires(self):
        op = _acoustic_op((21,))
        bufs = op.allocate(3)
        _fill(bufs, "m", 1.0)
        with pytest.raises(BoundsError):
            op.apply(steps=3, buffers=bufs, dt=DT, x_M=1000)

    def test_default_time_cap(self):
        funcs, eqs = wave_example(shape=(21,), so=2, factor=4, save=5,
                                  coordinates=((10.0,),))
        op = Operator(eqs)
        assert op.default_params(100)["t_M"] == 4 * 5 - 1
        bufs = op.allocate(100)
        _fill(bufs, "m", 1.0)
        bufs["q"].data[0, 0] = 1.0
        op.apply(steps=100, buffers=bufs, dt=DT)  # silent bounds checker

    def test_workers_bitwise_identical(self):
        op = _acoustic_op((24, 24), so=4)
        one, _ = _fixture_apply(op, 10, workers=1)
        four, _ = _fixture_apply(op, 10, workers=4)
        assert np.array_equal(one["u"].data, four["u"].data)
        assert np.array_equal(one["rec"].data, four["rec"].data)

    def test_reference_empty_program(self):
        assert reference_run([], {}, {}) == {}


class TestCodegen:
    def test_emission_deterministic(self):
        funcs, eqs = acoustic_example((21,))
        clear_cache()
        first = Operator(eqs).source
        clear_cache()
        second = Operator(eqs).source
        assert first == second
        assert "#pragma omp parallel for" in first
        assert "for (int x = " in first
        assert "int kernel(" in first

    def test_pragmas_and_guard(self):
        funcs, eqs = wave_example(shape=(21,), coordinates=((10.0,),))
        src = Operator(eqs).source
        assert "(t)%4 == 0" in src
        assert "#pragma omp atomic" in src
        assert "floor" in src

    def test_empty_iet(self):
        src = emit_c(Block())
        assert "int kernel(" in src
        assert "return 0;" in src

    def test_modulo_indexing(self):
        funcs, eqs = acoustic_example((21,))
        src = Operator(eqs).source
        assert "%3" in src


class TestCache:
    def test_hit_does_no_pass_work(self):
        clear_cache()
        funcs, eqs = acoustic_example((21,))
        first = Operator(eqs)
        before = op_mod.PASS_WORK
        second = Operator(eqs)
        assert second.cache_hit
        assert not first.cache_hit
        assert op_mod.PASS_WORK == before
        assert second.artifact is first.artifact

    def test_distinct_modes_distinct_artifacts(self):
        clear_cache()
        funcs, eqs = acoustic_example((21,))
        a = Operator(eqs, mode="basic")
        b = Operator(eqs, mode="aggressive")
        assert a.artifact is not b.artifact

    def test_op_counts_recorded(self):
        clear_cache()
        funcs, eqs = acoustic_example((21,), so=4)
        op = Operator(eqs, mode="advanced")
        art = op.artifact
        assert art.op_count_before and art.op_count_after
        assert sum(art.op_count_after) <= sum(art.op_count_before)
