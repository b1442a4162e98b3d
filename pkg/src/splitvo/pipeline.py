"""Frame-to-frame odometry on top of the split estimators.

Each incoming frame is matched against the current keyframe: the epipolar
stage estimates rotation and translation direction from the matched bearing
pairs, then the reprojection stage estimates the translation magnitude from
tracks that carry a depth. Depth starts out unknown; until enough tracks
have been triangulated, every track is assigned a common assumed depth, which
fixes the (arbitrary) global scale of the reconstruction and lets the
magnitude stage run from the very first frame pair. Once ten tracks hold
triangulated depth the assumed-depth phase is permanently released.

Tracks triangulate once their rotation-compensated parallax against the
keyframe passes a one degree gate; the depth standard deviation follows the
small-angle model sigma_d = d * sigma_angle / parallax. A later observation
with wider parallax retriangulates and fuses with the stored estimate by
inverse-variance weighting in inverse depth.

When the epipolar stage finds too few inliers, too few tracks overlap the
keyframe, or the magnitude residuals blow up, the previous frame becomes the
new keyframe: tracks observed there anchor to their observed bearings, and
tracks with depth that were not observed get a synthesized bearing by
transforming their point into the new keyframe. The current frame is then
re-estimated against the fresh keyframe; if that is impossible (the keyframe
already is the previous frame) the frame coasts on the prior with a flag.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    CameraModel,
    RelativePose,
    Rotation,
    UnitDirection,
    parallax_angles_deg,
    triangulate_two_view,
    Bearing,
)
from .relpose import RelPoseConfig, RelPoseStatus, estimate_relative_pose
from .transmag import (
    ReprojectionConfig,
    estimate_magnitude,
    magnitude_initial_guess,
)

logger = logging.getLogger(__name__)


class DepthState(enum.Enum):
    UNKNOWN = "unknown"
    ASSUMED = "assumed"
    TRIANGULATED = "triangulated"


@dataclass
class FeatureTrack:
    track_id: int
    keyframe_bearing: np.ndarray
    state: DepthState
    depth: float
    depth_sigma: float
    best_parallax_deg: float
    last_seen: int


@dataclass
class PipelineConfig:
    assumed_depth: float = 0.75
    release_after_triangulated: int = 10
    parallax_gate_deg: float = 1.0
    track_retention_frames: int = 150
    min_inliers_keyframe: int = 30
    min_overlap_keyframe: int = 10
    # median reprojection gate for keyframe refresh; must sit clear of the
    # two-view noise floor (about 1.2 px at 0.75 px per view) or the
    # keyframe churns every frame and drift compounds
    max_magnitude_reproj_px: float = 2.5
    min_depth_pairs: int = 3
    pixel_sigma: float = 0.75
    relpose: RelPoseConfig = field(default_factory=RelPoseConfig)
    reproj: ReprojectionConfig = field(default_factory=ReprojectionConfig)

    def __post_init__(self):
        if self.assumed_depth <= 0.0:
            raise ValueError("assumed depth must be positive")
        if self.parallax_gate_deg <= 0.0:
            raise ValueError("parallax gate must be positive")
        if self.track_retention_frames < 1:
            raise ValueError("retention must be at least one frame")


@dataclass
class FrameResult:
    frame_index: int
    world_pose: RelativePose          # camera-to-world
    relative_pose: RelativePose       # keyframe-to-frame
    keyframe_index: int
    n_matched: int
    n_inliers: int
    relpose_status: RelPoseStatus
    magnitude_outliers: int
    keyframe_inserted: bool
    coasted: bool
    constant_depth: bool
    magnitude_coasted: bool


class VoPipeline:
    """Stateful monocular odometry over a stream of tracked bearings."""

    def __init__(
        self,
        camera: CameraModel,
        config: Optional[PipelineConfig] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.camera = camera
        self.config = config or PipelineConfig()
        self.rng = rng or np.random.default_rng(0)
        self.tracks: dict[int, FeatureTrack] = {}
        self.keyframe_index: Optional[int] = None
        self.keyframe_world: RelativePose = RelativePose.identity()
        self.constant_depth = True
        self._prev_index: Optional[int] = None
        self._prev_obs: dict[int, np.ndarray] = {}
        self._prev_rel: RelativePose = RelativePose.identity()
        self._prev_direction: Optional[UnitDirection] = None
        self._prev_magnitude: float = 0.0
        self._want_keyframe = False

    @property
    def sigma_angle(self) -> float:
        return self.config.pixel_sigma / self.camera.fx

    @property
    def n_triangulated(self) -> int:
        return sum(1 for t in self.tracks.values() if t.state == DepthState.TRIANGULATED)

    def _new_track_state(self) -> tuple[DepthState, float, float]:
        if self.constant_depth:
            return DepthState.ASSUMED, self.config.assumed_depth, float("inf")
        return DepthState.UNKNOWN, 0.0, float("inf")

    def _start_keyframe(
        self,
        frame_index: int,
        observations: dict[int, np.ndarray],
        world_pose: RelativePose,
        carried: dict[int, FeatureTrack],
    ) -> None:
        self.keyframe_index = frame_index
        self.keyframe_world = world_pose
        self.tracks = carried
        state, depth, sigma = self._new_track_state()
        for tid, bearing in observations.items():
            if tid not in self.tracks:
                self.tracks[tid] = FeatureTrack(
                    tid, bearing, state, depth, sigma, 0.0, frame_index
                )

    def _insert_keyframe_at_previous(self) -> None:
        """Promote the previous frame to keyframe, transforming track depths."""
        assert self._prev_index is not None
        rel = self._prev_rel                      # old keyframe -> prev frame
        carried: dict[int, FeatureTrack] = {}
        state_new, depth_new, sigma_new = self._new_track_state()
        for tid, track in self.tracks.items():
            observed = tid in self._prev_obs
            if track.state == DepthState.TRIANGULATED:
                p = rel.apply(track.depth * track.keyframe_bearing)
                d_new = float(np.linalg.norm(p))
                if d_new < 1e-6:
                    continue
                bearing = self._prev_obs[tid] if observed else p / d_new
                scale = d_new / track.depth
                carried[tid] = FeatureTrack(
                    tid,
                    bearing,
                    DepthState.TRIANGULATED,
                    d_new,
                    track.depth_sigma * scale,
                    0.0,
                    self._prev_index,
                )
            elif observed:
                carried[tid] = FeatureTrack(
                    tid,
                    self._prev_obs[tid],
                    state_new,
                    depth_new,
                    sigma_new,
                    0.0,
                    self._prev_index,
                )
            # unobserved tracks without depth cannot be re-anchored
        world = self.keyframe_world.compose(rel.inverse())
        self._start_keyframe(self._prev_index, self._prev_obs, world, carried)
        self._prev_rel = RelativePose.identity()
        self._prev_direction = None
        self._prev_magnitude = 0.0

    def _drop_stale_tracks(self, frame_index: int) -> None:
        limit = self.config.track_retention_frames
        stale = [
            tid
            for tid, t in self.tracks.items()
            if frame_index - t.last_seen > limit
        ]
        for tid in stale:
            del self.tracks[tid]

    def _update_depths(
        self,
        rel: RelativePose,
        ids: np.ndarray,
        f: np.ndarray,
        f_prime: np.ndarray,
        inlier_mask: np.ndarray,
    ) -> None:
        # translation below the angular noise floor times the scene depth
        # produces no resolvable parallax: any per-pair parallax past the
        # gate is then noise and would triangulate phantom depths
        scene = [t.depth for t in self.tracks.values() if t.state != DepthState.UNKNOWN]
        ref_depth = float(np.median(scene)) if scene else self.config.assumed_depth
        if abs(rel.magnitude) < 2.0 * self.sigma_angle * ref_depth:
            return
        t = rel.translation
        gate_tan = math.tan(math.radians(self.config.parallax_gate_deg))
        parallax = parallax_angles_deg(rel.rotation, f, f_prime)
        for i in np.flatnonzero(inlier_mask):
            if parallax[i] < self.config.parallax_gate_deg:
                continue
            track = self.tracks[int(ids[i])]
            if parallax[i] <= track.best_parallax_deg:
                continue
            try:
                d = triangulate_two_view(
                    rel.rotation, t, Bearing(f[i]), Bearing(f_prime[i])
                )
            except ValueError:
                continue
            if d <= 1e-3:
                continue
            # genuine parallax at the gate needs baseline/depth of at
            # least tan(gate); far below that the measured parallax was
            # noise and the depth is fiction
            if abs(rel.magnitude) < 0.25 * gate_tan * d:
                continue
            sigma = d * self.sigma_angle / math.radians(parallax[i])
            if track.state == DepthState.TRIANGULATED:
                track.depth, track.depth_sigma = _fuse_inverse_depth(
                    track.depth, track.depth_sigma, d, sigma
                )
            else:
                track.state = DepthState.TRIANGULATED
                track.depth, track.depth_sigma = d, sigma
            track.best_parallax_deg = parallax[i]
        if (
            self.constant_depth
            and self.n_triangulated >= self.config.release_after_triangulated
        ):
            self.constant_depth = False
            logger.info("assumed-depth phase released")

    def _estimate_against_keyframe(
        self, observations: dict[int, np.ndarray], prior: Rotation, perturb: bool
    ):
        ids = np.array(
            [tid for tid in observations if tid in self.tracks], dtype=int
        )
        f = np.array([self.tracks[tid].keyframe_bearing for tid in ids]).reshape(-1, 3)
        fp = np.array([observations[tid] for tid in ids]).reshape(-1, 3)
        result = estimate_relative_pose(
            f, fp, prior, self.config.relpose, self.rng, perturb_prior=perturb
        )
        return ids, f, fp, result

    def process_frame(
        self,
        frame_index: int,
        track_ids: np.ndarray,
        bearings: np.ndarray,
        rotation_prior: Optional[Rotation] = None,
    ) -> FrameResult:
        """Advance the pipeline by one frame.

        track_ids are stable feature identities; bearings are (n, 3) unit
        observation rays in the current camera frame. rotation_prior, when
        given, is an externally measured keyframe-to-frame orientation (for
        example integrated gyro) and is trusted as-is; otherwise the previous
        frame's estimate serves as the prior and restarts may jitter it.
        """
        track_ids = np.asarray(track_ids, dtype=int)
        bearings = np.asarray(bearings, dtype=float)
        if bearings.ndim != 2 or bearings.shape != (track_ids.size, 3):
            raise ValueError("bearings must be (n, 3) matching track_ids")
        norms = np.linalg.norm(bearings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("bearings must be unit vectors")
        observations = {
            int(tid): b / n for tid, b, n in zip(track_ids, bearings, norms)
        }

        if self.keyframe_index is None:
            self._start_keyframe(
                frame_index, observations, RelativePose.identity(), {}
            )
            self._prev_index = frame_index
            self._prev_obs = observations
            self._prev_rel = RelativePose.identity()
            return FrameResult(
                frame_index,
                self.keyframe_world,
                RelativePose.identity(),
                frame_index,
                len(observations),
                0,
                RelPoseStatus.CONVERGED,
                0,
                True,
                False,
                self.constant_depth,
                False,
            )

        self._drop_stale_tracks(frame_index)
        for tid in observations:
            if tid in self.tracks:
                self.tracks[tid].last_seen = frame_index

        external_prior = rotation_prior is not None
        inserted = False
        coasted = False

        # a keyframe refresh requested by the previous frame lands here,
        # where that frame is exactly the promotion target
        if self._want_keyframe and self.keyframe_index != self._prev_index:
            old_rot = self._prev_rel.rotation
            self._insert_keyframe_at_previous()
            inserted = True
            if external_prior:
                rotation_prior = old_rot.inverse().compose(rotation_prior)
        self._want_keyframe = False

        prior = rotation_prior if external_prior else self._prev_rel.rotation

        ids, f, fp, result = self._estimate_against_keyframe(
            observations, prior, not external_prior
        )

        needs_keyframe = (
            result.status == RelPoseStatus.TOO_FEW_INLIERS
            or result.n_inliers < self.config.min_inliers_keyframe
            or ids.size < self.config.min_overlap_keyframe
        )
        if needs_keyframe:
            if self.keyframe_index != self._prev_index:
                old_rel_rot = self._prev_rel.rotation
                self._insert_keyframe_at_previous()
                inserted = True
                prior = old_rel_rot.inverse().compose(prior)
                ids, f, fp, result = self._estimate_against_keyframe(
                    observations, prior, not external_prior
                )
            if result.status == RelPoseStatus.TOO_FEW_INLIERS:
                coasted = True

        keyframe_is_previous = self.keyframe_index == self._prev_index or inserted

        if coasted:
            direction = (
                self._prev_direction
                if self._prev_direction is not None
                else UnitDirection.from_vector([0.0, 0.0, 1.0])
            )
            rel = RelativePose(prior, direction, 0.0)
            magnitude_outliers = 0
            magnitude_coasted = True
            reproj_high = False
        else:
            s0 = magnitude_initial_guess(
                self._prev_magnitude,
                self._prev_direction,
                result.direction,
                keyframe_is_previous,
            )
            usable_states = (
                (DepthState.ASSUMED, DepthState.TRIANGULATED)
                if self.constant_depth
                else (DepthState.TRIANGULATED,)
            )
            depth_ok = np.array(
                [self.tracks[int(tid)].state in usable_states for tid in ids],
                dtype=bool,
            )
            use = result.inlier_mask & depth_ok
            magnitude_coasted = int(np.count_nonzero(use)) < self.config.min_depth_pairs
            if magnitude_coasted:
                rel = RelativePose(result.rotation, result.direction, s0)
                magnitude_outliers = 0
                reproj_high = False
            else:
                depths = np.array(
                    [self.tracks[int(tid)].depth for tid in ids[use]]
                )
                mag = estimate_magnitude(
                    self.camera,
                    result.rotation,
                    result.direction,
                    f[use],
                    depths,
                    fp[use],
                    s0,
                    self.config.reproj,
                )
                rel = RelativePose(result.rotation, result.direction, mag.magnitude)
                magnitude_outliers = mag.n_outliers
                reproj_high = (
                    float(np.median(mag.reproj_errors_px))
                    > self.config.max_magnitude_reproj_px
                )

            self._update_depths(rel, ids, f, fp, result.inlier_mask)

        if reproj_high:
            # pose accepted, but magnitude residuals say the keyframe has
            # gone stale; request a refresh before the next frame
            self._want_keyframe = True

        world = self.keyframe_world.compose(rel.inverse())

        self._prev_index = frame_index
        self._prev_obs = observations
        self._prev_rel = rel
        self._prev_direction = rel.direction
        self._prev_magnitude = rel.magnitude

        return FrameResult(
            frame_index,
            world,
            rel,
            self.keyframe_index,
            int(ids.size),
            result.n_inliers if not coasted else 0,
            result.status,
            magnitude_outliers,
            inserted,
            coasted,
            self.constant_depth,
            magnitude_coasted,
        )

def _fuse_inverse_depth(
    d_old: float, s_old: float, d_new: float, s_new: float
) -> tuple[float, float]:
    """Inverse-variance fusion of two depth estimates in inverse depth."""
    rho_old, rho_new = 1.0 / d_old, 1.0 / d_new
    sr_old = s_old / (d_old * d_old)
    sr_new = s_new / (d_new * d_new)
    w_old = 1.0 / (sr_old * sr_old)
    w_new = 1.0 / (sr_new * sr_new)
    rho = (w_old * rho_old + w_new * rho_new) / (w_old + w_new)
    sr = math.sqrt(1.0 / (w_old + w_new))
    d = 1.0 / rho
    return d, sr * d * d
