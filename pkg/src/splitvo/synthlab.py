"""Synthetic camera sequences with known ground truth.

A sequence is a smooth camera sweep through a static landmark cloud. The
landmarks are sampled inside the first frame's viewing frustum (uniform over
pixels, uniform in range), so frame 0 sees all of them and later frames see
most. Motion is constant angular and linear velocity plus small smooth
sinusoidal perturbations whose amplitude scales with the total motion, so a
zero-translation sequence translates exactly zero.

Conventions: frame 0 is the world frame. The stored pose of frame k maps
camera-k coordinates into the world, p_w = R_k p_k + c_k, with c_k the
camera center. The ground-truth relative pose of frame k against keyframe 0
is therefore (R_k^T, -R_k^T c_k) in the package's keyframe-to-frame sense.

Trajectory errors are reported as percentages of the total ground-truth
motion: the largest per-frame orientation error over the largest pairwise
ground-truth rotation, and the largest camera-center error (after a global
least-squares scale fit, since a monocular estimate may recover length only
up to scale) over the largest pairwise ground-truth center distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraModel,
    RelativePose,
    Rotation,
    add_pixel_noise_to_bearings,
    project_many,
    unproject,
)


@dataclass
class SequenceConfig:
    n_frames: int = 37
    n_landmarks: int = 200
    total_rotation_deg: float = 25.0
    total_translation: float = 1.0
    perturbation_scale: float = 0.02
    depth_range: tuple[float, float] = (1.0, 6.0)
    pixel_sigma: float = 0.75

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        if self.n_landmarks < 1:
            raise ValueError("need at least one landmark")
        if not (0.0 < self.depth_range[0] < self.depth_range[1]):
            raise ValueError("bad depth range")
        if self.pixel_sigma < 0.0:
            raise ValueError("pixel sigma must be non-negative")


@dataclass
class SyntheticSequence:
    camera: CameraModel
    config: SequenceConfig
    landmarks: np.ndarray            # (m, 3) world == frame-0 coordinates
    rotations: list[Rotation]        # R_k, camera-to-world
    centers: np.ndarray              # (n, 3) camera centers in world
    visible: np.ndarray              # (n, m) bool
    bearings: list[np.ndarray]       # per frame (m, 3) noisy unit bearings
    bearings_clean: list[np.ndarray]

    @property
    def n_frames(self) -> int:
        return len(self.rotations)

    def gt_relative_pose(self, frame: int, keyframe: int = 0) -> RelativePose:
        """Keyframe-to-frame transform: p_frame = R p_keyframe + t."""
        rot = self.rotations[frame].inverse().compose(self.rotations[keyframe])
        t = self.rotations[frame].matrix.T @ (
            self.centers[keyframe] - self.centers[frame]
        )
        return RelativePose.from_rt(rot, t)

    def gt_ranges(self, frame: int) -> np.ndarray:
        """Distance of each landmark from the frame's camera center."""
        return np.linalg.norm(self.landmarks - self.centers[frame], axis=1)


def _smooth_offsets(n: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """(n, 3) smooth per-axis offsets, exactly zero at the first frame."""
    if amplitude == 0.0:
        return np.zeros((n, 3))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
    s = np.linspace(0.0, 2.0 * math.pi, n)
    return amplitude * (np.sin(s[:, None] + phase[None, :]) - np.sin(phase)[None, :])


def generate_sequence(
    config: SequenceConfig,
    rng: np.random.Generator,
    camera: CameraModel | None = None,
) -> SyntheticSequence:
    cam = camera or CameraModel.spherical_default()
    m = config.n_landmarks
    n = config.n_frames

    px = np.column_stack(
        [rng.uniform(0.0, cam.width, size=m), rng.uniform(0.0, cam.height, size=m)]
    )
    rays = np.array([unproject(cam, p) for p in px])
    ranges = rng.uniform(config.depth_range[0], config.depth_range[1], size=m)
    landmarks = rays * ranges[:, None]

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    heading = rng.normal(size=3)
    heading /= np.linalg.norm(heading)
    total_rot = math.radians(config.total_rotation_deg)

    rot_jitter = _smooth_offsets(n, config.perturbation_scale * total_rot, rng)
    center_jitter = _smooth_offsets(
        n, config.perturbation_scale * config.total_translation, rng
    )

    fractions = np.linspace(0.0, 1.0, n)
    rotations = [
        Rotation.exp(axis * (total_rot * frac)).compose(Rotation.exp(rot_jitter[k]))
        for k, frac in enumerate(fractions)
    ]
    centers = (
        heading[None, :] * (config.total_translation * fractions)[:, None]
        + center_jitter
    )

    visible = np.zeros((n, m), dtype=bool)
    bearings, bearings_clean = [], []
    for k in range(n):
        local = (landmarks - centers[k]) @ rotations[k].matrix
        z_ok = local[:, 2] > 0.05
        uv = np.full((m, 2), -1.0)
        uv[z_ok] = project_many(cam, local[z_ok])
        in_img = (
            z_ok
            & (uv[:, 0] >= 0.0)
            & (uv[:, 0] < cam.width)
            & (uv[:, 1] >= 0.0)
            & (uv[:, 1] < cam.height)
        )
        visible[k] = in_img
        clean = np.zeros((m, 3))
        norms = np.linalg.norm(local, axis=1)
        ok = norms > 0
        clean[ok] = local[ok] / norms[ok, None]
        noisy = add_pixel_noise_to_bearings(cam, clean[ok], config.pixel_sigma, rng)
        full = np.zeros((m, 3))
        full[ok] = noisy
        bearings_clean.append(clean)
        bearings.append(full)

    return SyntheticSequence(
        cam, config, landmarks, rotations, centers, visible, bearings, bearings_clean
    )


@dataclass
class PairObservations:
    """Correspondences between a keyframe and a later frame."""

    f: np.ndarray                # (n, 3) keyframe bearings (noisy)
    f_prime: np.ndarray          # (n, 3) frame bearings (noisy)
    landmark_ids: np.ndarray     # (n,) indices into the sequence landmarks
    gt_ranges: np.ndarray        # (n,) true keyframe-center-to-landmark distance
    is_outlier: np.ndarray       # (n,) bool, True where f_prime was corrupted

    @property
    def n_pairs(self) -> int:
        return self.f.shape[0]


def pair_observations(
    seq: SyntheticSequence,
    frame: int,
    keyframe: int = 0,
    outlier_fraction: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PairObservations:
    """Jointly visible landmark pairs, optionally with corrupted matches.

    An outlier replaces the current-frame bearing with the ray of a random
    image location, mimicking a false correspondence that still looks like a
    plausible detection.
    """
    ids = np.flatnonzero(seq.visible[keyframe] & seq.visible[frame])
    f = seq.bearings[keyframe][ids].copy()
    fp = seq.bearings[frame][ids].copy()
    is_outlier = np.zeros(ids.size, dtype=bool)
    if outlier_fraction > 0.0:
        if rng is None:
            raise ValueError("outlier injection needs an rng")
        n_out = int(round(outlier_fraction * ids.size))
        chosen = rng.choice(ids.size, size=n_out, replace=False)
        cam = seq.camera
        px = np.column_stack(
            [
                rng.uniform(0.0, cam.width, size=n_out),
                rng.uniform(0.0, cam.height, size=n_out),
            ]
        )
        fp[chosen] = np.array([unproject(cam, p) for p in px])
        is_outlier[chosen] = True
    return PairObservations(f, fp, ids, seq.gt_ranges(keyframe)[ids], is_outlier)


def max_pairwise_rotation_deg(rotations: list[Rotation]) -> float:
    worst = 0.0
    for i in range(len(rotations)):
        for j in range(i + 1, len(rotations)):
            worst = max(worst, rotations[i].angle_to(rotations[j]))
    return worst


def max_pairwise_distance(centers: np.ndarray) -> float:
    d = centers[:, None, :] - centers[None, :, :]
    return float(np.sqrt((d * d).sum(axis=2)).max())


def fit_global_scale(est_centers: np.ndarray, gt_centers: np.ndarray) -> float:
    """Least-squares scalar aligning estimated centers to ground truth."""
    denom = float(np.sum(est_centers * est_centers))
    if denom < 1e-18:
        return 1.0
    return float(np.sum(est_centers * gt_centers)) / denom


@dataclass
class TrajectoryErrors:
    rot_err_pct: float
    trans_err_pct: float
    per_frame_rot_pct: np.ndarray
    per_frame_trans_pct: np.ndarray
    scale: float


def trajectory_errors(
    seq: SyntheticSequence,
    est_poses: list[RelativePose],
    frames: list[int],
    keyframe: int = 0,
) -> TrajectoryErrors:
    """Error percentages of estimated keyframe-to-frame poses.

    est_poses[i] is the estimate for frames[i]. Orientation errors are
    geodesic angles against ground truth, normalized by the largest pairwise
    ground-truth rotation. Center errors are Euclidean after a global scale
    fit, normalized by the largest pairwise ground-truth center distance.
    """
    gt = [seq.gt_relative_pose(k, keyframe) for k in frames]
    rot_den = max_pairwise_rotation_deg([seq.rotations[k] for k in frames] + [seq.rotations[keyframe]])
    trans_den = max_pairwise_distance(seq.centers[[keyframe] + list(frames)])
    if rot_den < 1e-9 or trans_den < 1e-12:
        raise ValueError("trajectory has no motion to normalize against")

    rot_errs = np.array(
        [est.rotation.angle_to(g.rotation) for est, g in zip(est_poses, gt)]
    )
    est_centers = np.array([est.camera_center() for est in est_poses])
    gt_centers = np.array([g.camera_center() for g in gt])
    scale = fit_global_scale(est_centers, gt_centers)
    center_errs = np.linalg.norm(scale * est_centers - gt_centers, axis=1)

    per_rot = 100.0 * rot_errs / rot_den
    per_trans = 100.0 * center_errs / trans_den
    return TrajectoryErrors(
        float(per_rot.max()), float(per_trans.max()), per_rot, per_trans, scale
    )


WHISKER_PERCENTILES = (5.0, 25.0, 50.0, 75.0, 95.0)


def whisker_stats(values: np.ndarray) -> dict[str, float]:
    """Five-number summary used by the benchmark outputs."""
    v = np.asarray(values, dtype=float)
    p = np.percentile(v, WHISKER_PERCENTILES)
    return {"p5": p[0], "p25": p[1], "p50": p[2], "p75": p[3], "p95": p[4]}
