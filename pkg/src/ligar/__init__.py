"""Multi-modal hierarchical group activity recognition on synthetic scenes.

The package couples three modality encoders (LiDAR point clouds, a video
occupancy grid, and a token narration) through LiDAR-guided cross
attention and an adaptive per-scale fusion, then decodes individual,
group, and scene labels hierarchically.  Everything runs on a small
float64 autodiff tape so training is bitwise reproducible.
"""

from .tape import ComputationRecord, DimensionError, NumericsError, Tensor

__all__ = [
    "ComputationRecord",
    "DimensionError",
    "NumericsError",
    "Tensor",
]

__version__ = "0.1.0"
