"""Monocular visual odometry with decoupled translation magnitude.

The package estimates frame-to-keyframe motion in two stages: a 5-dof
epipolar stage recovers rotation and translation direction from bearing
correspondences alone, and a 1-dof reprojection stage recovers the
translation magnitude from whatever depth information is available. The
split keeps the geometry solvable from the very first frames, when depth is
still unknown, and degrades gracefully under pure rotation.
"""

from .geometry import (
    Bearing,
    CameraModel,
    RelativePose,
    Rotation,
    UnitDirection,
)
from .optim import LMConfig, LMStatus, StopReason, lm_minimize
from .relpose import (
    RelPoseConfig,
    RelPoseResult,
    RelPoseStatus,
    estimate_relative_pose,
    refine_relative_pose,
)
from .transmag import (
    MagnitudeResult,
    ReprojectionConfig,
    estimate_magnitude,
    estimate_pose_6dof,
)
from .pipeline import (
    DepthState,
    FrameResult,
    PipelineConfig,
    VoPipeline,
)
from .estimators import RelativePoseEstimator, TranslationMagnitudeEstimator
from .synthlab import (
    PairObservations,
    SequenceConfig,
    SyntheticSequence,
    TrajectoryErrors,
    generate_sequence,
    pair_observations,
    trajectory_errors,
    whisker_stats,
)
from .datasetio import (
    BearingPairRecord,
    DatasetFormatError,
    convert_json_lines,
    read_dataset,
    subsample_records,
    write_dataset,
)

__all__ = [
    "Bearing",
    "CameraModel",
    "RelativePose",
    "Rotation",
    "UnitDirection",
    "LMConfig",
    "LMStatus",
    "StopReason",
    "lm_minimize",
    "RelPoseConfig",
    "RelPoseResult",
    "RelPoseStatus",
    "estimate_relative_pose",
    "refine_relative_pose",
    "MagnitudeResult",
    "ReprojectionConfig",
    "estimate_magnitude",
    "estimate_pose_6dof",
    "DepthState",
    "FrameResult",
    "PipelineConfig",
    "VoPipeline",
    "RelativePoseEstimator",
    "TranslationMagnitudeEstimator",
    "PairObservations",
    "SequenceConfig",
    "SyntheticSequence",
    "TrajectoryErrors",
    "generate_sequence",
    "pair_observations",
    "trajectory_errors",
    "whisker_stats",
    "BearingPairRecord",
    "DatasetFormatError",
    "convert_json_lines",
    "read_dataset",
    "subsample_records",
    "write_dataset",
]

__version__ = "0.1.0"
