import math

import numpy as np
import pytest

from splitvo.geometry import CameraModel, RelativePose, Rotation
from splitvo.relpose import epipolar_normals
from splitvo.synthlab import (
    SequenceConfig,
    WHISKER_PERCENTILES,
    fit_global_scale,
    generate_sequence,
    max_pairwise_distance,
    max_pairwise_rotation_deg,
    pair_observations,
    trajectory_errors,
    whisker_stats,
)


def make_seq(seed=0, **kw):
    return generate_sequence(SequenceConfig(**kw), np.random.default_rng(seed))


class TestSequence:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SequenceConfig(n_frames=1)
        with pytest.raises(ValueError):
            SequenceConfig(depth_range=(6.0, 1.0))
        with pytest.raises(ValueError):
            SequenceConfig(pixel_sigma=-0.1)

    def test_first_frame_is_world_origin(self):
        seq = make_seq()
        assert seq.rotations[0].angle_deg() < 1e-12
        assert np.allclose(seq.centers[0], 0.0)

    def test_total_motion_matches_config(self):
        seq = make_seq(seed=3, perturbation_scale=0.0)
        assert seq.rotations[-1].angle_deg() == pytest.approx(25.0, abs=1e-9)
        assert np.linalg.norm(seq.centers[-1]) == pytest.approx(1.0, abs=1e-12)

    def test_all_landmarks_visible_in_keyframe(self):
        seq = make_seq(seed=1)
        assert seq.visible[0].all()

    def test_most_landmarks_visible_throughout(self):
        # the sweep should keep the large majority of points in view
        mins = [make_seq(seed=s).visible.sum(axis=1).min() for s in range(5)]
        assert min(mins) > 80
        assert np.mean(mins) > 110

    def test_landmark_ranges_in_bounds(self):
        seq = make_seq(seed=2)
        r = seq.gt_ranges(0)
        assert r.min() >= 1.0 and r.max() <= 6.0

    def test_clean_bearings_satisfy_epipolar_constraint(self):
        seq = make_seq(seed=4, pixel_sigma=0.0)
        for k in (1, 18, 36):
            pose = seq.gt_relative_pose(k)
            ids = np.flatnonzero(seq.visible[0] & seq.visible[k])
            m = epipolar_normals(
                pose.rotation, seq.bearings_clean[0][ids], seq.bearings_clean[k][ids]
            )
            assert np.abs(m @ pose.direction.vector).max() < 1e-12

    def test_gt_relative_pose_maps_landmarks(self):
        seq = make_seq(seed=5)
        k = 20
        pose = seq.gt_relative_pose(k)
        i = int(np.flatnonzero(seq.visible[0] & seq.visible[k])[0])
        p_kf = seq.landmarks[i]                       # frame-0 == world coords
        p_k = pose.apply(p_kf)
        b = p_k / np.linalg.norm(p_k)
        assert np.allclose(b, seq.bearings_clean[k][i], atol=1e-12)

    def test_gt_relative_pose_between_arbitrary_frames(self):
        seq = make_seq(seed=6)
        pose = seq.gt_relative_pose(30, keyframe=12)
        i = int(np.flatnonzero(seq.visible[12] & seq.visible[30])[0])
        p12 = (seq.landmarks[i] - seq.centers[12]) @ seq.rotations[12].matrix
        p30 = pose.apply(p12)
        assert np.allclose(
            p30 / np.linalg.norm(p30), seq.bearings_clean[30][i], atol=1e-12
        )

    def test_zero_translation_variant_is_exact(self):
        seq = make_seq(seed=7, total_translation=0.0)
        assert np.allclose(seq.centers, 0.0)
        assert seq.gt_relative_pose(36).magnitude == 0.0

    def test_noise_level(self):
        noisy = generate_sequence(SequenceConfig(), np.random.default_rng(8))
        k = 0
        ang = np.arccos(
            np.clip(
                np.einsum("ij,ij->i", noisy.bearings[k], noisy.bearings_clean[k]),
                -1,
                1,
            )
        )
        px = ang * 200.0
        assert 0.5 < np.mean(px) < 1.5  # Rayleigh mean ~ 0.94 px at sigma 0.75

    def test_deterministic_given_seed(self):
        a = make_seq(seed=9)
        b = make_seq(seed=9)
        assert np.array_equal(a.landmarks, b.landmarks)
        assert np.array_equal(a.bearings[5], b.bearings[5])


class TestPairObservations:
    def test_pairs_are_jointly_visible(self):
        seq = make_seq(seed=10)
        obs = pair_observations(seq, 25)
        assert obs.n_pairs == np.count_nonzero(seq.visible[0] & seq.visible[25])
        assert np.all(seq.visible[0][obs.landmark_ids])
        assert np.all(seq.visible[25][obs.landmark_ids])
        assert not obs.is_outlier.any()

    def test_outlier_injection_fraction(self):
        seq = make_seq(seed=11)
        obs = pair_observations(
            seq, 20, outlier_fraction=0.3, rng=np.random.default_rng(0)
        )
        assert obs.is_outlier.sum() == round(0.3 * obs.n_pairs)
        # corrupted bearings are still unit and in the frustum-ish
        bad = obs.f_prime[obs.is_outlier]
        assert np.allclose(np.linalg.norm(bad, axis=1), 1.0, atol=1e-12)
        assert (bad[:, 2] > 0).all()

    def test_outlier_needs_rng(self):
        seq = make_seq(seed=12)
        with pytest.raises(ValueError, match="rng"):
            pair_observations(seq, 10, outlier_fraction=0.1)

    def test_ranges_match_geometry(self):
        seq = make_seq(seed=13)
        obs = pair_observations(seq, 15)
        want = np.linalg.norm(seq.landmarks[obs.landmark_ids], axis=1)
        assert np.allclose(obs.gt_ranges, want, atol=1e-12)


class TestMetrics:
    def test_max_pairwise_rotation(self):
        rots = [Rotation.exp(np.array([0.0, 0.0, a])) for a in (0.0, 0.1, 0.25)]
        assert max_pairwise_rotation_deg(rots) == pytest.approx(
            math.degrees(0.25), abs=1e-9
        )

    def test_max_pairwise_distance(self):
        c = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 2.0, 0]])
        assert max_pairwise_distance(c) == pytest.approx(math.sqrt(5.0))

    def test_global_scale_fit(self):
        rng = np.random.default_rng(14)
        gt = rng.normal(size=(10, 3))
        est = gt / 3.0
        assert fit_global_scale(est, gt) == pytest.approx(3.0, rel=1e-12)

    def test_global_scale_degenerate(self):
        assert fit_global_scale(np.zeros((4, 3)), np.ones((4, 3))) == 1.0

    def test_perfect_estimates_give_zero_error(self):
        seq = make_seq(seed=15)
        frames = list(range(1, seq.n_frames))
        poses = [seq.gt_relative_pose(k) for k in frames]
        err = trajectory_errors(seq, poses, frames)
        assert err.rot_err_pct < 1e-9
        assert err.trans_err_pct < 1e-9
        assert err.scale == pytest.approx(1.0, abs=1e-12)

    def test_scale_ambiguity_forgiven(self):
        # halving every translation must cost nothing after the scale fit
        seq = make_seq(seed=16)
        frames = list(range(1, seq.n_frames))
        poses = [
            RelativePose(
                seq.gt_relative_pose(k).rotation,
                seq.gt_relative_pose(k).direction,
                0.5 * seq.gt_relative_pose(k).magnitude,
            )
            for k in frames
        ]
        err = trajectory_errors(seq, poses, frames)
        assert err.trans_err_pct < 1e-9
        assert err.scale == pytest.approx(2.0, rel=1e-9)

    def test_known_rotation_error_percentage(self):
        seq = make_seq(seed=17, perturbation_scale=0.0)
        frames = list(range(1, seq.n_frames))
        poses = []
        for k in frames:
            gt = seq.gt_relative_pose(k)
            rot = gt.rotation if k != frames[-1] else gt.rotation.retract(
                np.radians([2.5, 0.0, 0.0])
            )
            poses.append(RelativePose(rot, gt.direction, gt.magnitude))
        err = trajectory_errors(seq, poses, frames)
        assert err.rot_err_pct == pytest.approx(100.0 * 2.5 / 25.0, rel=1e-6)

    def test_no_motion_raises(self):
        seq = make_seq(seed=18, total_translation=0.0)
        with pytest.raises(ValueError, match="no motion"):
            trajectory_errors(seq, [seq.gt_relative_pose(1)], [1])


class TestWhisker:
    def test_percentile_convention(self):
        # linear interpolation on 1..100
        vals = np.arange(1.0, 101.0)
        stats = whisker_stats(vals)
        assert stats["p5"] == pytest.approx(5.95)
        assert stats["p25"] == pytest.approx(25.75)
        assert stats["p50"] == pytest.approx(50.5)
        assert stats["p75"] == pytest.approx(75.25)
        assert stats["p95"] == pytest.approx(95.05)

    def test_order(self):
        assert WHISKER_PERCENTILES == (5.0, 25.0, 50.0, 75.0, 95.0)
