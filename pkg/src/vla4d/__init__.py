"""Data-side toolkit for spatiotemporal vision-language-action models.

Memory-bank keyframe sampling, RGB-D back-projection, coordinate-system
chaos, action normalization, spatial/temporal embeddings and the action
loss, plus a toy experiment on coordinate chaos.
"""

from .actions import Action, NormStats
from .chaos import ChaosTransform
from .geometry import CameraModel, DepthGrid, PointGrid, Pose
from .rng import Prng
from .tensorio import FrameRecord, Tensor, TrajectoryManifest

__version__ = "0.1.0"

__all__ = [
    "Action",
    "CameraModel",
    "ChaosTransform",
    "DepthGrid",
    "FrameRecord",
    "NormStats",
    "PointGrid",
    "Pose",
    "Prng",
    "Tensor",
    "TrajectoryManifest",
]
