"""Reprojection-based estimation: translation magnitude and a 6-dof baseline.

Both estimators minimize the same robustified pixel reprojection cost between
predicted and observed rays of the current frame; they differ only in the
parameter chart. The magnitude estimator holds rotation and translation
direction fixed (already recovered from epipolar geometry) and slides a
single scalar along the direction, so it stays well posed even from a cold
start. The baseline optimizes all six pose parameters at once, which is the
classical formulation it is compared against.

Pixel errors are whitened by the measurement sigma and reweighted with a
smooth Huber factor so individual gross errors cannot dominate; features
whose final error stays large are flagged, not dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import CameraModel, Rotation, UnitDirection, reprojection_errors_px
from .optim import LMConfig, LMStatus, lm_minimize

logger = logging.getLogger(__name__)


def huber_weights(q: np.ndarray, delta: float) -> np.ndarray:
    """Residual scale factors w = sqrt(g(q)/q) for squared whitened errors q.

    g is the Huber loss on q: identity up to delta^2, then 2*delta*sqrt(q)
    minus delta^2. w tends to 1 for small errors and decays like q^(-1/4)
    past the elbow; with delta = inf this reproduces plain least squares.
    """
    if not np.isfinite(delta):
        return np.ones_like(q)
    d2 = delta * delta
    # evaluate the tail branch only where it applies; below the elbow its
    # argument would go negative
    qs = np.maximum(q, d2)
    return np.where(q <= d2, 1.0, np.sqrt((2.0 * delta * np.sqrt(qs) - d2) / qs))


@dataclass
class ReprojectionConfig:
    pixel_sigma: float = 0.75
    huber_delta_px: float = 2.0
    outlier_threshold_px: float = 1.5
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        if self.pixel_sigma <= 0.0:
            raise ValueError("pixel sigma must be positive")
        if self.huber_delta_px <= 0.0:
            raise ValueError("huber delta must be positive")


def _robust_residual_px(
    camera: CameraModel,
    points: np.ndarray,
    observed: np.ndarray,
    cfg: ReprojectionConfig,
) -> np.ndarray:
    err = reprojection_errors_px(camera, points, observed)
    wh = err / cfg.pixel_sigma
    q = np.einsum("ij,ij->i", wh, wh)
    w = huber_weights(q, cfg.huber_delta_px / cfg.pixel_sigma)
    return (w[:, None] * wh).ravel()


@dataclass
class MagnitudeResult:
    magnitude: float
    outlier_mask: np.ndarray
    reproj_errors_px: np.ndarray
    status: LMStatus

    @property
    def n_outliers(self) -> int:
        return int(np.count_nonzero(self.outlier_mask))


def magnitude_initial_guess(
    previous_magnitude: float,
    previous_direction: Optional[UnitDirection],
    direction: UnitDirection,
    keyframe_is_previous_frame: bool,
) -> float:
    """Seed for the magnitude solve.

    A fresh keyframe means the baseline starts near zero. Otherwise carry
    the previous magnitude, with its sign flipped if the newly estimated
    direction points the opposite way (the epipolar solution only fixes the
    direction up to sign).
    """
    if keyframe_is_previous_frame or previous_direction is None:
        return 0.0
    if float(np.dot(direction.vector, previous_direction.vector)) < 0.0:
        return -previous_magnitude
    return previous_magnitude


def estimate_magnitude(
    camera: CameraModel,
    rotation: Rotation,
    direction: UnitDirection,
    f: np.ndarray,
    depths: np.ndarray,
    f_prime: np.ndarray,
    initial_magnitude: float = 0.0,
    config: Optional[ReprojectionConfig] = None,
) -> MagnitudeResult:
    """Translation magnitude along a fixed direction from depth-backed pairs.

    f: (n, 3) keyframe bearings with depths (n,); f_prime: (n, 3) observed
    current-frame bearings. Predicted points are R (d_i f_i) + s u. The
    scalar s is the only unknown; negative values are legitimate (motion
    against the direction vector).
    """
    cfg = config or ReprojectionConfig()
    f = np.asarray(f, dtype=float)
    f_prime = np.asarray(f_prime, dtype=float)
    depths = np.asarray(depths, dtype=float)
    rotated = (f * depths[:, None]) @ rotation.matrix.T
    u = direction.vector

    def residual(s: float) -> np.ndarray:
        return _robust_residual_px(camera, rotated + s * u, f_prime, cfg)

    s, status = lm_minimize(
        residual, lambda s, d: s + float(d[0]), float(initial_magnitude), 1, cfg.lm
    )
    err = reprojection_errors_px(camera, rotated + s * u, f_prime)
    err_norm = np.linalg.norm(err, axis=1)
    return MagnitudeResult(float(s), err_norm > cfg.outlier_threshold_px, err_norm, status)


Pose6State = tuple[Rotation, np.ndarray]


def estimate_pose_6dof(
    camera: CameraModel,
    f: np.ndarray,
    depths: np.ndarray,
    f_prime: np.ndarray,
    rotation0: Rotation,
    t0: np.ndarray,
    config: Optional[ReprojectionConfig] = None,
) -> tuple[Rotation, np.ndarray, LMStatus]:
    """Classical joint pose refinement over (R, t) from depth-backed pairs.

    Same robust reprojection cost as the magnitude estimator, but all six
    degrees of freedom move at once: chart (R exp([theta]_x), t + dt).
    """
    cfg = config or ReprojectionConfig()
    f = np.asarray(f, dtype=float)
    f_prime = np.asarray(f_prime, dtype=float)
    scaled = np.asarray(depths, dtype=float)[:, None] * f

    def residual(state: Pose6State) -> np.ndarray:
        rotation, t = state
        return _robust_residual_px(camera, scaled @ rotation.matrix.T + t, f_prime, cfg)

    def retract(state: Pose6State, delta: np.ndarray) -> Pose6State:
        rotation, t = state
        return rotation.retract(delta[:3]), t + delta[3:6]

    (rotation, t), status = lm_minimize(
        residual, retract, (rotation0, np.asarray(t0, dtype=float)), 6, cfg.lm
    )
    return rotation, t, status
