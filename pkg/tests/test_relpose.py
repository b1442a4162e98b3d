import math

import numpy as np
import pytest
from pairgen import make_pairs, random_rotation_matrix, unit_rows

from splitvo.geometry import Rotation, UnitDirection
from splitvo.optim import LMConfig
from splitvo.relpose import (
    RelPoseConfig,
    RelPoseStatus,
    build_data_matrix,
    direction_from_rotation,
    epipolar_normal_matrix,
    epipolar_normals,
    estimate_relative_pose,
    functional_and_gradients,
    functional_value,
    refine_relative_pose,
)


def functional_direct(rotation, u, f, fp):
    """Independent evaluation: sum of squared normal-direction projections."""
    m = np.cross(f @ rotation.matrix.T, fp)
    return float(np.sum((m @ u) ** 2))


def random_state(rng):
    rot = Rotation(random_rotation_matrix(rng, 2.5))
    u = UnitDirection.from_vector(rng.normal(size=3))
    return rot, u


class TestDataMatrix:
    def test_symmetric_psd(self):
        rng = np.random.default_rng(0)
        f, fp, _ = make_pairs(rng, np.eye(3), [0.1, 0.0, 0.05], n=40)
        c = build_data_matrix(f, fp)
        assert c.shape == (27, 27)
        assert np.allclose(c, c.T, atol=1e-12)
        assert np.linalg.eigvalsh(c).min() > -1e-10

    def test_quadratic_form_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = rng.integers(8, 60)
            f = unit_rows(rng.normal(size=(n, 3)))
            fp = unit_rows(rng.normal(size=(n, 3)))
            c = build_data_matrix(f, fp)
            for _ in range(10):
                rot, u = random_state(rng)
                got = functional_value(c, rot, u)
                want = functional_direct(rot, u.vector, f, fp)
                assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_matches_eigen_form(self):
        # x^T C x must also equal u^T M(R) u
        rng = np.random.default_rng(2)
        f = unit_rows(rng.normal(size=(25, 3)))
        fp = unit_rows(rng.normal(size=(25, 3)))
        c = build_data_matrix(f, fp)
        for _ in range(20):
            rot, u = random_state(rng)
            m = epipolar_normal_matrix(rot, f, fp)
            assert functional_value(c, rot, u) == pytest.approx(
                float(u.vector @ m @ u.vector), rel=1e-10
            )

    def test_sign_symmetric_in_direction(self):
        rng = np.random.default_rng(3)
        f = unit_rows(rng.normal(size=(20, 3)))
        fp = unit_rows(rng.normal(size=(20, 3)))
        c = build_data_matrix(f, fp)
        rot, u = random_state(rng)
        assert functional_value(c, rot, u) == pytest.approx(
            functional_value(c, rot, u.flipped()), rel=1e-12
        )


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        f = unit_rows(rng.normal(size=(30, 3)))
        fp = unit_rows(rng.normal(size=(30, 3)))
        c = build_data_matrix(f, fp)
        h = 1e-6
        for _ in range(100):
            rot, u = random_state(rng)
            _, g_theta, g_beta = functional_and_gradients(c, rot, u)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fd = (
                    functional_value(c, rot.retract(e), u)
                    - functional_value(c, rot.retract(-e), u)
                ) / (2 * h)
                assert abs(fd - g_theta[i]) <= 1e-5 * max(1.0, abs(g_theta[i]))
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (
                    functional_value(c, rot, u.retract(e))
                    - functional_value(c, rot, u.retract(-e))
                ) / (2 * h)
                assert abs(fd - g_beta[j]) <= 1e-5 * max(1.0, abs(g_beta[j]))

    def test_zero_gradient_at_exact_solution(self):
        rng = np.random.default_rng(5)
        rot_m = random_rotation_matrix(rng, 0.4)
        t = np.array([0.2, -0.1, 0.05])
        f, fp, _ = make_pairs(rng, rot_m, t, n=120)
        c = build_data_matrix(f, fp)
        rot = Rotation(rot_m)
        u = UnitDirection.from_vector(t)
        value, g_theta, g_beta = functional_and_gradients(c, rot, u)
        # the Gram-matrix evaluation cancels O(n)-sized terms, so "zero"
        # bottoms out around n * eps * scale rather than eps^2
        assert value < 1e-12
        assert np.linalg.norm(g_theta) < 1e-10
        assert np.linalg.norm(g_beta) < 1e-10


class TestEigenDirection:
    def test_recovers_direction_at_true_rotation(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            rot_m = random_rotation_matrix(rng, 0.4)
            t = rng.normal(size=3)
            t *= 0.3 / np.linalg.norm(t)
            f, fp, _ = make_pairs(rng, rot_m, t, n=100)
            d, degenerate = direction_from_rotation(Rotation(rot_m), f, fp)
            assert not degenerate
            assert d.angle_to(UnitDirection.from_vector(t)) < 1e-5

    def test_pure_rotation_is_degenerate(self):
        rng = np.random.default_rng(7)
        rot_m = random_rotation_matrix(rng, 0.4)
        f, fp, _ = make_pairs(rng, rot_m, np.zeros(3), n=100)
        _, degenerate = direction_from_rotation(Rotation(rot_m), f, fp)
        assert degenerate

    def test_normals_orthogonal_to_true_direction(self):
        rng = np.random.default_rng(8)
        rot_m = random_rotation_matrix(rng, 0.4)
        t = np.array([0.1, 0.2, -0.05])
        f, fp, _ = make_pairs(rng, rot_m, t, n=50)
        m = epipolar_normals(Rotation(rot_m), f, fp)
        u = t / np.linalg.norm(t)
        assert np.max(np.abs(m @ u)) < 1e-12


class TestRefine:
    def test_noiseless_exact_recovery(self):
        rng = np.random.default_rng(9)
        for trial in range(5):
            rot_m = random_rotation_matrix(rng, 0.5)
            t = rng.normal(size=3)
            t *= rng.uniform(0.05, 0.5) / np.linalg.norm(t)
            f, fp, _ = make_pairs(rng, rot_m, t, n=150)
            rot_gt = Rotation(rot_m)
            u_gt = UnitDirection.from_vector(t)

            rot0 = rot_gt.retract(np.radians(rng.uniform(-3, 3, size=3)))
            u0, _ = direction_from_rotation(rot0, f, fp)
            rot, u, value, status = refine_relative_pose(f, fp, rot0, u0)
            assert status.converged
            assert rot.angle_to(rot_gt) < 0.01
            assert u.angle_to(u_gt) < 0.1
            assert value < 1e-12

    def test_weight_zero_accepts_stationary_points(self):
        # with no pull toward minima the solver settles wherever the
        # gradient vanishes; from a good start that is still the solution
        rng = np.random.default_rng(10)
        rot_m = random_rotation_matrix(rng, 0.3)
        t = np.array([0.25, -0.1, 0.1])
        f, fp, _ = make_pairs(rng, rot_m, t, n=150)
        rot_gt = Rotation(rot_m)
        rot0 = rot_gt.retract(np.radians([0.5, -0.5, 0.5]))
        u0, _ = direction_from_rotation(rot0, f, fp)
        rot, u, _, _ = refine_relative_pose(f, fp, rot0, u0, weight=0.0)
        assert rot.angle_to(rot_gt) < 0.05

    def test_reuses_prebuilt_data_matrix(self):
        rng = np.random.default_rng(11)
        rot_m = random_rotation_matrix(rng, 0.3)
        t = np.array([0.2, 0.0, 0.1])
        f, fp, _ = make_pairs(rng, rot_m, t, n=80)
        c = build_data_matrix(f, fp)
        rot0 = Rotation(rot_m).retract(np.radians([1.0, 0.0, -1.0]))
        u0, _ = direction_from_rotation(rot0, f, fp)
        a = refine_relative_pose(f, fp, rot0, u0)
        b = refine_relative_pose(f, fp, rot0, u0, data_matrix=c)
        assert a[0].angle_to(b[0]) < 1e-12
        assert a[2] == pytest.approx(b[2], rel=1e-12, abs=1e-30)


class TestRobustEstimate:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            RelPoseConfig(hypothesis_iterations=0)
        with pytest.raises(ValueError):
            RelPoseConfig(inlier_threshold_rad=0.0)
        with pytest.raises(ValueError):
            RelPoseConfig(min_inliers=2)

    def test_clean_noisy_data(self):
        rng = np.random.default_rng(12)
        rot_m = random_rotation_matrix(rng, 0.3)
        t = np.array([0.3, -0.05, 0.1])
        f, fp, _ = make_pairs(rng, rot_m, t, n=170)
        sigma = 0.75 / 200.0
        fp = unit_rows(fp + rng.normal(scale=sigma, size=fp.shape))
        prior = Rotation(rot_m).retract(np.radians([1.0, -1.0, 0.5]))
        res = estimate_relative_pose(f, fp, prior, rng=rng)
        assert res.status == RelPoseStatus.CONVERGED
        assert res.rotation.angle_to(Rotation(rot_m)) < 0.2
        assert res.direction.angle_to(UnitDirection.from_vector(t)) < 3.0
        assert res.n_inliers > 0.9 * 170

    def test_outlier_rejection(self):
        rng = np.random.default_rng(13)
        rot_m = random_rotation_matrix(rng, 0.3)
        t = np.array([0.25, 0.1, -0.05])
        f, fp, _ = make_pairs(rng, rot_m, t, n=160)
        n_out = 48
        out_idx = rng.choice(160, size=n_out, replace=False)
        is_outlier = np.zeros(160, dtype=bool)
        is_outlier[out_idx] = True
        fp[out_idx] = unit_rows(
            np.column_stack(
                [
                    rng.uniform(-0.8, 0.8, n_out),
                    rng.uniform(-0.6, 0.6, n_out),
                    np.ones(n_out),
                ]
            )
        )
        prior = Rotation(rot_m).retract(np.radians([1.5, 1.0, -1.0]))
        res = estimate_relative_pose(f, fp, prior, rng=rng)
        assert res.status == RelPoseStatus.CONVERGED
        assert res.rotation.angle_to(Rotation(rot_m)) < 0.1
        assert res.direction.angle_to(UnitDirection.from_vector(t)) < 2.0
        recall = np.count_nonzero(res.inlier_mask & ~is_outlier) / (160 - n_out)
        assert recall >= 0.95
        kept_outliers = np.count_nonzero(res.inlier_mask & is_outlier)
        assert kept_outliers <= 0.1 * n_out

    def test_pure_rotation_reports_degenerate(self):
        rng = np.random.default_rng(14)
        rot_m = random_rotation_matrix(rng, 0.3)
        f, fp, _ = make_pairs(rng, rot_m, np.zeros(3), n=120)
        prior = Rotation(rot_m).retract(np.radians([0.5, -0.3, 0.2]))
        res = estimate_relative_pose(f, fp, prior, rng=rng)
        assert res.status == RelPoseStatus.DEGENERATE
        assert res.rotation.angle_to(Rotation(rot_m)) < 0.01

    def test_too_few_pairs(self):
        rng = np.random.default_rng(15)
        rot_m = random_rotation_matrix(rng, 0.2)
        f, fp, _ = make_pairs(rng, rot_m, [0.1, 0.0, 0.0], n=6)
        res = estimate_relative_pose(f, fp, Rotation(rot_m), rng=rng)
        assert res.status == RelPoseStatus.TOO_FEW_INLIERS

    def test_deterministic_given_rng_seed(self):
        rng1 = np.random.default_rng(16)
        rot_m = random_rotation_matrix(rng1, 0.3)
        t = np.array([0.2, 0.0, 0.1])
        f, fp, _ = make_pairs(rng1, rot_m, t, n=100)
        prior = Rotation(rot_m).retract(np.radians([1.0, 0.0, 0.0]))
        a = estimate_relative_pose(f, fp, prior, rng=np.random.default_rng(99))
        b = estimate_relative_pose(f, fp, prior, rng=np.random.default_rng(99))
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.rotation.angle_to(b.rotation) == 0.0
