"""Estimator front-ends with the familiar fit/predict surface.

These wrap the functional core so the two stages slot into pipelines and
grid searches that expect get_params/set_params and fitted attributes with
trailing underscores. Sample matrices are plain float arrays: bearing pairs
as rows [f | f'], optionally extended with a depth column for the magnitude
stage. Quantities that are not per-sample data (camera model, the rotation
and direction fixed by the first stage, a rotation prior) travel as fit
keyword arguments.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import split_bearing_pairs, split_magnitude_rows
from .geometry import CameraModel, Rotation, UnitDirection, sampson_distances_sq
from .relpose import RelPoseConfig, estimate_relative_pose
from .transmag import ReprojectionConfig, estimate_magnitude


class RelativePoseEstimator(BaseEstimator):
    """Robust rotation and translation-direction estimation from bearing pairs.

    Parameters mirror the underlying robust loop; anything not exposed here
    keeps its default. random_state seeds the restart sampling, so a fixed
    value makes fit deterministic.
    """

    def __init__(
        self,
        weight: float = 50.0,
        inlier_threshold_rad: float = 0.01,
        min_inliers: int = 10,
        hypothesis_iterations: int = 5,
        random_state: Optional[int] = None,
    ):
        self.weight = weight
        self.inlier_threshold_rad = inlier_threshold_rad
        self.min_inliers = min_inliers
        self.hypothesis_iterations = hypothesis_iterations
        self.random_state = random_state

    def fit(self, X, y=None, prior_rotation: Optional[Rotation] = None):
        """Fit on (n, 6) rows [keyframe bearing | current bearing].

        prior_rotation defaults to the identity, which is enough whenever
        the true rotation is within the restart basin (a few tens of
        degrees); pass a better prior for aggressive motion.
        """
        f, f_prime = split_bearing_pairs(X)
        config = RelPoseConfig(
            hypothesis_iterations=self.hypothesis_iterations,
            inlier_threshold_rad=self.inlier_threshold_rad,
            min_inliers=self.min_inliers,
            functional_weight=self.weight,
        )
        rng = np.random.default_rng(self.random_state)
        prior = prior_rotation if prior_rotation is not None else Rotation.identity()
        result = estimate_relative_pose(f, f_prime, prior, config, rng)
        self.n_features_in_ = 6
        self.rotation_ = result.rotation
        self.direction_ = result.direction
        self.inlier_mask_ = result.inlier_mask
        self.functional_ = result.functional
        self.status_ = result.status
        return self

    def _check_fitted(self):
        if not hasattr(self, "rotation_"):
            raise NotFittedError("call fit before using this estimator")

    def decision_function(self, X) -> np.ndarray:
        """Epipolar consistency of each pair under the fitted pose (radians)."""
        self._check_fitted()
        f, f_prime = split_bearing_pairs(X)
        d2 = sampson_distances_sq(self.rotation_, self.direction_, f, f_prime)
        return np.sqrt(d2)

    def predict(self, X) -> np.ndarray:
        """Classify pairs as inliers of the fitted pose."""
        return self.decision_function(X) <= self.inlier_threshold_rad


class TranslationMagnitudeEstimator(BaseEstimator):
    """Signed translation-magnitude estimation from depth-bearing pairs."""

    def __init__(
        self,
        pixel_sigma: float = 0.75,
        huber_delta_px: float = 2.0,
        outlier_threshold_px: float = 1.5,
    ):
        self.pixel_sigma = pixel_sigma
        self.huber_delta_px = huber_delta_px
        self.outlier_threshold_px = outlier_threshold_px

    def fit(
        self,
        X,
        y=None,
        *,
        rotation: Optional[Rotation] = None,
        direction: Optional[UnitDirection] = None,
        camera: Optional[CameraModel] = None,
        initial_magnitude: float = 0.0,
    ):
        """Fit on (n, 7) rows [keyframe bearing | current bearing | depth].

        rotation, direction and camera are required keywords: the first two
        come from the epipolar stage, the camera fixes the pixel scale of
        the robust loss.
        """
        if rotation is None or direction is None or camera is None:
            raise ValueError("fit requires rotation=, direction= and camera=")
        f, f_prime, depths = split_magnitude_rows(X)
        config = ReprojectionConfig(
            pixel_sigma=self.pixel_sigma,
            huber_delta_px=self.huber_delta_px,
            outlier_threshold_px=self.outlier_threshold_px,
        )
        result = estimate_magnitude(
            camera, rotation, direction, f, depths, f_prime,
            initial_magnitude, config,
        )
        self.n_features_in_ = 7
        self.magnitude_ = result.magnitude
        self.outlier_mask_ = result.outlier_mask
        self.reproj_errors_px_ = result.reproj_errors_px
        self.status_ = result.status
        self._rotation = rotation
        self._direction = direction
        return self

    def predict(self, X) -> np.ndarray:
        """Predicted current-frame bearings for (n, 7) rows under the fit."""
        if not hasattr(self, "magnitude_"):
            raise NotFittedError("call fit before using this estimator")
        f, _, depths = split_magnitude_rows(X)
        p = (f * depths[:, None]) @ self._rotation.matrix.T
        p = p + self.magnitude_ * self._direction.vector
        norms = np.linalg.norm(p, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("a predicted point lies at the camera center")
        return p / norms[:, None]
