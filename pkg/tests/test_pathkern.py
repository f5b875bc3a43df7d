"""Backend duality for the killed-Brownian path engine.

The compiled and vectorized backends must consume identical counter-based
integer streams and take identical branches; only last-ulp transcendental
differences are allowed.  Determinism must not depend on thread count.
"""
import numpy as np
import pytest

from speclab.pathkern import (
    BACKEND_ENV,
    HAVE_NUMBA,
    BackendError,
    active_backend,
    available_backends,
    run_paths,
    set_worker_count,
    step_count,
)
from speclab.rng import MAX_PATHS, MAX_STEPS, stream_key, uniform_at

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not importable")

KEY = stream_key(123, "paths")


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    # Backend choice must come from the test, never from the caller's shell.
    monkeypatch.delenv(BACKEND_ENV, raising=False)


class TestBackendSelection:
    def test_numpy_always_available(self):
        assert "numpy" in available_backends()

    def test_explicit_names_round_trip(self):
        assert active_backend("numpy") == "numpy"
        for name in available_backends():
            assert active_backend(name) == name

    def test_unknown_name_rejected(self):
        with pytest.raises(BackendError, match="unknown backend"):
            active_backend("fortran")

    def test_env_flag_selects_backend(self, monkeypatch):
        monkeypatch.setenv(BACKEND_ENV, "numpy")
        assert active_backend() == "numpy"
        monkeypatch.setenv(BACKEND_ENV, "bogus")
        with pytest.raises(BackendError, match="unknown backend"):
            active_backend()

    def test_explicit_override_beats_env(self, monkeypatch):
        monkeypatch.setenv(BACKEND_ENV, "numpy")
        for name in available_backends():
            assert active_backend(name) == name

    @needs_numba
    def test_compiled_backend_is_default_when_present(self):
        assert active_backend() == "numba"
        assert available_backends() == ("numba", "numpy")


class TestStepCount:
    def test_exact_division(self):
        n, last = step_count(0.1, 0.001)
        assert n == 100
        assert last == pytest.approx(0.001, rel=1e-9)

    def test_partial_final_step(self):
        n, last = step_count(0.1005, 0.001)
        assert n == 101
        assert last == pytest.approx(0.0005, rel=1e-9)

    def test_horizon_shorter_than_dt(self):
        n, last = step_count(1e-8, 1e-3)
        assert n == 1
        assert last == pytest.approx(1e-8)

    def test_step_lengths_tile_the_horizon(self):
        for t_end, dt in [(0.3, 0.007), (1.0, 1e-3), (0.05, 0.05)]:
            n, last = step_count(t_end, dt)
            assert 0.0 < last <= dt * (1.0 + 1e-9)
            assert dt * (n - 1) + last == pytest.approx(t_end, rel=1e-12)

    def test_nonpositive_inputs_rejected(self):
        with pytest.raises(ValueError):
            step_count(0.0, 1e-3)
        with pytest.raises(ValueError):
            step_count(0.1, 0.0)
        with pytest.raises(ValueError):
            step_count(-1.0, 1e-3)

    def test_counter_budget_enforced(self):
        with pytest.raises(ValueError, match="counter budget"):
            step_count(float(MAX_STEPS + 10), 1.0)


class TestRunPathsValidation:
    def test_start_outside_rejected(self):
        with pytest.raises(ValueError, match="not inside"):
            run_paths(1.0, 1.0, 1.5, 0.5, 0.1, 1e-3, KEY, 10, backend="numpy")

    def test_start_on_boundary_rejected(self):
        with pytest.raises(ValueError, match="not inside"):
            run_paths(1.0, 1.0, 0.0, 0.5, 0.1, 1e-3, KEY, 10, backend="numpy")

    def test_zero_paths_rejected(self):
        with pytest.raises(ValueError, match="at least one path"):
            run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 0, backend="numpy")

    def test_path_budget_enforced(self):
        with pytest.raises(ValueError, match="counter budget"):
            run_paths(
                1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 10,
                path0=MAX_PATHS - 5, backend="numpy",
            )


class TestPathSemantics:
    def test_exits_on_boundary_survivors_inside(self):
        tau, px, py = run_paths(
            1.0, 1.0, 0.5, 0.5, 0.05, 1e-3, KEY, 4000, backend="numpy"
        )
        exited = tau >= 0.0
        assert 0 < exited.sum() < 4000  # both outcomes occur at this horizon
        edge = np.minimum.reduce(
            [px[exited], 1.0 - px[exited], py[exited], 1.0 - py[exited]]
        )
        assert np.max(np.abs(edge)) < 1e-12  # exit points snapped onto a face
        assert np.all(tau[exited] <= 0.05 + 1e-12)
        inside = ~exited
        assert np.all((px[inside] > 0) & (px[inside] < 1))
        assert np.all((py[inside] > 0) & (py[inside] < 1))

    def test_bridge_flag_changes_the_kill_decision(self):
        kwargs = dict(backend="numpy")
        tau_b, _, _ = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 2e-3, KEY, 4000,
                                bridge=True, **kwargs)
        tau_n, _, _ = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 2e-3, KEY, 4000,
                                bridge=False, **kwargs)
        # Bridge kills strictly more paths (it can only add crossings).
        assert (tau_b >= 0).sum() > (tau_n >= 0).sum()

    def test_path0_offsets_the_stream(self):
        tau_a, px_a, _ = run_paths(1.0, 1.0, 0.5, 0.5, 0.05, 1e-3, KEY, 50,
                                   path0=10, backend="numpy")
        tau_b, px_b, _ = run_paths(1.0, 1.0, 0.5, 0.5, 0.05, 1e-3, KEY, 60,
                                   backend="numpy")
        # Paths are addressed by absolute index: a shifted batch is a slice.
        np.testing.assert_array_equal(tau_a, tau_b[10:])
        np.testing.assert_array_equal(px_a, px_b[10:])


class TestDeterminism:
    @pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
    def test_bitwise_reproducible_within_backend(self, warm, backend):
        a = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 5000, backend=backend)
        b = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 5000, backend=backend)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    @needs_numba
    def test_worker_count_does_not_change_results(self, warm):
        try:
            set_worker_count(1)
            one = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 20000)
            set_worker_count(8)
            eight = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 20000)
        finally:
            set_worker_count(None)
        for u, v in zip(one, eight):
            np.testing.assert_array_equal(u, v)

    @needs_numba
    def test_backends_agree_to_rounding(self, warm):
        nb = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 5000, backend="numba")
        vp = run_paths(1.0, 1.0, 0.5, 0.5, 0.1, 1e-3, KEY, 5000, backend="numpy")
        # Identical branch decisions: the same paths survive on both backends.
        np.testing.assert_array_equal(nb[0] < 0, vp[0] < 0)
        # Positions/times differ only through last-ulp transcendentals.
        assert np.max(np.abs(nb[0] - vp[0])) < 1e-12
        assert np.max(np.abs(nb[1] - vp[1])) < 1e-12
        assert np.max(np.abs(nb[2] - vp[2])) < 1e-12

    @needs_numba
    def test_compiled_uniform_matches_reference_map(self, warm):
        from speclab.pathkern import _uniform_u

        key = np.uint64(KEY)
        for p in (0, 1, 7, 2**20):
            for s in (0, 1, 13, 2**30):
                for c in (0, 1, 2):
                    got = float(_uniform_u(
                        key, np.uint64(p), np.uint64(s), np.uint64(c)
                    ))
                    assert got == uniform_at(KEY, p, s, c)
