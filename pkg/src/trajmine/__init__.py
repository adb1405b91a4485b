"""trajmine: mine hard examples with pseudo-labels from videos by fusing
detection and template-tracking results into trajectories."""

__version__ = "0.1.0"

from .geometry import AffineParams, Box, Polygon, RotatedRect, iou
from .tmm import Detection, MiningConfig, Trajectory, TrajectoryEntry

__all__ = [
    "AffineParams",
    "Box",
    "Detection",
    "MiningConfig",
    "Polygon",
    "RotatedRect",
    "Trajectory",
    "TrajectoryEntry",
    "iou",
    "__version__",
]
