"""Differentiable Gaussian splatting on the CPU."""

from .camera import CameraModel, look_at, orbit_camera
from .oracle import rasterize_oracle
from .project import (DEFAULT_CONFIG, SMOOTH_CONFIG, Projection, RasterConfig, Splat2D, project,
                      project_backward, project_gaussian)
from .rasterize import (RenderOutput, active_signature, rasterize, rasterize_backward, rasterize_op,
                        worker_count)

__all__ = [
    "CameraModel", "DEFAULT_CONFIG", "Projection", "RasterConfig", "RenderOutput", "SMOOTH_CONFIG",
    "Splat2D", "active_signature", "look_at", "orbit_camera", "project", "project_backward",
    "project_gaussian", "rasterize", "rasterize_backward", "rasterize_op", "rasterize_oracle",
    "worker_count",
]
