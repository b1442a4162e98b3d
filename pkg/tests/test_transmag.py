import math

import numpy as np
import pytest
from pairgen import make_pairs, random_rotation_matrix, unit_rows

from splitvo.geometry import CameraModel, Rotation, UnitDirection
from splitvo.transmag import (
    MagnitudeResult,
    ReprojectionConfig,
    estimate_magnitude,
    estimate_pose_6dof,
    huber_weights,
    magnitude_initial_guess,
)

CAM = CameraModel.spherical_default()


def scene(rng, max_angle=0.3, t=(0.25, -0.1, 0.1), n=150):
    rot_m = random_rotation_matrix(rng, max_angle)
    t = np.asarray(t, dtype=float)
    f, fp, depths = make_pairs(rng, rot_m, t, n=n)
    return Rotation(rot_m), t, f, fp, depths


class TestHuber:
    def test_identity_below_elbow(self):
        q = np.array([0.0, 1.0, 3.9999])
        assert np.allclose(huber_weights(q, 2.0), 1.0)

    def test_known_value_past_elbow(self):
        # delta = 2, q = 16: g = 2*2*4 - 4 = 12, w = sqrt(12/16)
        assert huber_weights(np.array([16.0]), 2.0)[0] == pytest.approx(
            math.sqrt(0.75), rel=1e-12
        )

    def test_infinite_delta_is_plain_least_squares(self):
        q = np.array([0.1, 5.0, 1e6])
        assert np.array_equal(huber_weights(q, float("inf")), np.ones(3))

    def test_continuous_at_elbow(self):
        d = 2.0
        below = huber_weights(np.array([d * d - 1e-12]), d)[0]
        above = huber_weights(np.array([d * d + 1e-12]), d)[0]
        assert below == pytest.approx(above, abs=1e-9)

    def test_loss_value_is_huber(self):
        # w^2 * q reconstructs g(q): linear growth in sqrt(q) past the elbow
        d = 2.0
        q = np.array([25.0])
        g = (huber_weights(q, d) ** 2) * q
        assert g[0] == pytest.approx(2 * d * 5.0 - d * d, rel=1e-12)


class TestInitialGuess:
    def setup_method(self):
        self.u = UnitDirection.from_vector([0.0, 0.0, 1.0])

    def test_fresh_keyframe_starts_at_zero(self):
        assert magnitude_initial_guess(0.4, self.u, self.u, True) == 0.0

    def test_carries_previous_magnitude(self):
        assert magnitude_initial_guess(0.4, self.u, self.u, False) == 0.4

    def test_flips_sign_with_direction(self):
        flipped = UnitDirection.from_vector([0.0, 0.1, -1.0])
        assert magnitude_initial_guess(0.4, self.u, flipped, False) == -0.4

    def test_no_previous_direction(self):
        assert magnitude_initial_guess(0.4, None, self.u, False) == 0.0


class TestMagnitude:
    def test_noiseless_exact(self):
        rng = np.random.default_rng(0)
        rot, t, f, fp, depths = scene(rng)
        s_gt = np.linalg.norm(t)
        u = UnitDirection.from_vector(t)
        res = estimate_magnitude(CAM, rot, u, f, depths, fp)
        assert res.status.converged
        assert res.magnitude == pytest.approx(s_gt, abs=1e-6)
        assert res.n_outliers == 0

    def test_flipped_direction_gives_negative_magnitude(self):
        rng = np.random.default_rng(1)
        rot, t, f, fp, depths = scene(rng)
        u = UnitDirection.from_vector(-t)
        res = estimate_magnitude(CAM, rot, u, f, depths, fp)
        assert res.magnitude == pytest.approx(-np.linalg.norm(t), abs=1e-6)

    def test_zero_translation(self):
        rng = np.random.default_rng(2)
        rot, _, f, fp, depths = scene(rng, t=(0.0, 0.0, 0.0))
        u = UnitDirection.from_vector([1.0, 0.0, 0.0])
        res = estimate_magnitude(CAM, rot, u, f, depths, fp)
        assert abs(res.magnitude) < 1e-9

    def test_noisy_accuracy(self):
        rng = np.random.default_rng(3)
        rot, t, f, fp, depths = scene(rng)
        from splitvo.geometry import add_pixel_noise_to_bearings

        fp = add_pixel_noise_to_bearings(CAM, fp, 0.75, rng)
        u = UnitDirection.from_vector(t)
        res = estimate_magnitude(CAM, rot, u, f, depths, fp)
        assert res.magnitude == pytest.approx(np.linalg.norm(t), abs=0.05)

    def test_gross_outliers_flagged_not_fatal(self):
        rng = np.random.default_rng(4)
        rot, t, f, fp, depths = scene(rng)
        bad = [3, 40, 77, 90, 120]
        fp[bad] = unit_rows(fp[bad] + 0.3 * rng.normal(size=(5, 3)))
        u = UnitDirection.from_vector(t)
        res = estimate_magnitude(CAM, rot, u, f, depths, fp)
        assert res.magnitude == pytest.approx(np.linalg.norm(t), abs=0.01)
        assert set(np.flatnonzero(res.outlier_mask)) >= set(bad)
        assert res.n_outliers <= 10

    def test_wrong_depths_leave_large_errors(self):
        rng = np.random.default_rng(5)
        rot, t, f, fp, depths = scene(rng)
        u = UnitDirection.from_vector(t)
        res = estimate_magnitude(CAM, rot, u, f, np.full_like(depths, 0.75), fp)
        # scale collapses toward the assumed depth ratio; errors reported
        assert res.reproj_errors_px.shape == (150,)
        assert res.n_outliers > 0

    def test_pinhole_camera_path(self):
        rng = np.random.default_rng(6)
        pin = CameraModel("pinhole", 400.0, 400.0, 320.0, 240.0, 640, 480)
        rot_m = random_rotation_matrix(rng, 0.1)
        t = np.array([0.1, 0.05, -0.02])
        f, fp, depths = make_pairs(rng, rot_m, t, n=100, spread=0.4)
        u = UnitDirection.from_vector(t)
        res = estimate_magnitude(pin, Rotation(rot_m), u, f, depths, fp)
        assert res.magnitude == pytest.approx(np.linalg.norm(t), abs=1e-6)


class TestPose6dof:
    def test_noiseless_exact(self):
        rng = np.random.default_rng(7)
        rot, t, f, fp, depths = scene(rng)
        rot0 = rot.retract(np.radians([1.5, -1.0, 0.5]))
        t0 = t + np.array([0.05, -0.03, 0.02])
        got_rot, got_t, status = estimate_pose_6dof(CAM, f, depths, fp, rot0, t0)
        assert status.converged
        assert got_rot.angle_to(rot) < 0.01
        assert np.linalg.norm(got_t - t) < 1e-6

    def test_noisy_stays_close(self):
        rng = np.random.default_rng(8)
        rot, t, f, fp, depths = scene(rng)
        from splitvo.geometry import add_pixel_noise_to_bearings

        fp = add_pixel_noise_to_bearings(CAM, fp, 0.75, rng)
        got_rot, got_t, status = estimate_pose_6dof(CAM, f, depths, fp, rot, t)
        assert got_rot.angle_to(rot) < 0.5
        assert np.linalg.norm(got_t - t) < 0.05

    def test_huber_absorbs_gross_outliers(self):
        rng = np.random.default_rng(9)
        rot, t, f, fp, depths = scene(rng)
        bad = rng.choice(150, size=8, replace=False)
        fp[bad] = unit_rows(fp[bad] + 0.3 * rng.normal(size=(8, 3)))
        got_rot, got_t, _ = estimate_pose_6dof(CAM, f, depths, fp, rot, t)
        # smooth reweighting shrinks but never zeroes gross terms, so a
        # small residual pull remains
        assert got_rot.angle_to(rot) < 0.15
        assert np.linalg.norm(got_t - t) < 0.02


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ReprojectionConfig(pixel_sigma=0.0)
        with pytest.raises(ValueError):
            ReprojectionConfig(huber_delta_px=-1.0)
