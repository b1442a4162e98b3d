import math

import numpy as np
import pytest

from splitvo.geometry import Rotation
from splitvo.optim import LMConfig, LMStatus, StopReason, fd_jacobian, lm_minimize


def vector_retract(x, d):
    return x + d


class TestConfig:
    def test_rejects_bad_iteration_count(self):
        with pytest.raises(ValueError):
            LMConfig(max_iterations=0)

    def test_rejects_bad_damping(self):
        with pytest.raises(ValueError):
            LMConfig(damping_up=0.5)
        with pytest.raises(ValueError):
            LMConfig(damping_down=1.5)

    def test_rejects_negative_tolerance(self):
        with pytest.raises(ValueError):
            LMConfig(cost_tolerance=-1.0)


class TestEuclidean:
    def test_linear_least_squares_matches_lstsq(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(20, 4))
        b = rng.normal(size=20)
        expected = np.linalg.lstsq(a, b, rcond=None)[0]
        x, status = lm_minimize(
            lambda x: a @ x - b, vector_retract, np.zeros(4), 4,
            jacobian_fn=lambda x: a,
        )
        assert status.converged
        assert np.allclose(x, expected, atol=1e-8)

    def test_rosenbrock(self):
        def residual(x):
            return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

        x, status = lm_minimize(
            residual, vector_retract, np.array([-1.2, 1.0]), 2,
            LMConfig(max_iterations=200),
        )
        assert status.converged
        assert np.allclose(x, [1.0, 1.0], atol=1e-6)
        assert status.cost < 1e-12

    def test_cost_history_is_monotone(self):
        def residual(x):
            return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

        _, status = lm_minimize(
            residual, vector_retract, np.array([-1.2, 1.0]), 2,
            LMConfig(max_iterations=200),
        )
        h = status.cost_history
        assert len(h) >= 2
        assert all(b < a for a, b in zip(h, h[1:]))

    def test_max_iterations_respected(self):
        def residual(x):
            return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

        _, status = lm_minimize(
            residual, vector_retract, np.array([-1.2, 1.0]), 2,
            LMConfig(max_iterations=2),
        )
        assert status.reason == StopReason.MAX_ITER
        assert status.iterations == 2

    def test_scalar_state(self):
        x, status = lm_minimize(
            lambda s: np.array([s - 3.0]), lambda s, d: s + float(d[0]), 0.0, 1
        )
        assert status.converged
        assert x == pytest.approx(3.0, abs=1e-8)


class TestRobustness:
    def test_nan_residual_at_start(self):
        x, status = lm_minimize(
            lambda x: np.array([float("nan")]), vector_retract, np.zeros(1), 1
        )
        assert status.reason == StopReason.NUMERICAL_FAILURE

    def test_nan_residual_mid_run_keeps_last_good_state(self):
        def residual(x):
            if x[0] > 1.0:
                return np.array([float("nan")])
            return np.array([x[0] - 0.9])

        x, status = lm_minimize(residual, vector_retract, np.zeros(1), 1)
        assert np.isfinite(x[0])
        assert status.reason != StopReason.NUMERICAL_FAILURE or np.isfinite(x[0])

    def test_flat_residual_stops_cleanly(self):
        x, status = lm_minimize(
            lambda x: np.ones(2), vector_retract, np.zeros(2), 2
        )
        assert status.reason in (StopReason.STEP_TOL, StopReason.COST_TOL)
        assert status.cost == pytest.approx(2.0)


class TestFiniteDifferences:
    def test_fd_jacobian_matches_analytic(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(5, 3))

        def residual(x):
            return a @ x + np.sin(x).sum()

        x0 = rng.normal(size=3)
        jac = fd_jacobian(residual, vector_retract, x0, 3)
        expected = a + np.cos(x0)[None, :]
        assert np.allclose(jac, expected, atol=1e-6)


class TestManifoldState:
    def test_converges_to_target_rotation(self):
        rng = np.random.default_rng(3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        target = Rotation.exp(axis * 0.8)

        def residual(rot):
            return target.inverse().compose(rot).log()

        x0 = Rotation.identity()
        got, status = lm_minimize(
            residual, lambda r, d: r.retract(d), x0, 3, LMConfig(max_iterations=100)
        )
        assert status.converged
        assert got.angle_to(target) < 1e-6
