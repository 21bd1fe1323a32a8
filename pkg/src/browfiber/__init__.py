"""Single-view fiber-level eyebrow geometry: root localization, fiber growth and evaluation metrics."""
from .core import (FIBER_POINTS, GROWTH_STEP, Camera, Fiber, FiberSet, RootSet, TriMesh, look_at, project,
                   resample_fiber, sample_surface)
from .errors import BrowError, FormatError
from .fields import ArcField, ConstantField, SwirlField, VoxelGridField
from .growth import GrowthConfig, grow_all, grow_fiber
from .metrics import dcd, evaluate, fdo, iou, mle, nde

__version__ = "0.1.0"

__all__ = ["FIBER_POINTS", "GROWTH_STEP", "Camera", "Fiber", "FiberSet", "RootSet", "TriMesh", "look_at", "project",
           "resample_fiber", "sample_surface", "BrowError", "FormatError", "ArcField", "ConstantField", "SwirlField",
           "VoxelGridField", "GrowthConfig", "grow_all", "grow_fiber", "dcd", "evaluate", "fdo", "iou", "mle", "nde"]
