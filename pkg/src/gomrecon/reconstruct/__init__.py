"""Feed-forward iterative reconstruction from posed source images."""

from .attention import fuse_multi_source, mesh_aggregate
from .encoder import encode_images, image_pyramid, pyramid_operators, sample_pixel_aligned
from .model import (FeedbackState, ModelConfig, ReconstructResult, SourceSet, StepContext,
                    compute_feedback_features, feedback_step, gaussian_head, gaussian_means, init_params,
                    initial_state, project_tensor, reconstruct, render_sources, render_state,
                    update_gaussians, update_vertices, vertex_residual)

__all__ = [
    "FeedbackState", "ModelConfig", "ReconstructResult", "SourceSet", "StepContext",
    "compute_feedback_features", "encode_images", "feedback_step", "fuse_multi_source", "gaussian_head",
    "gaussian_means", "image_pyramid", "init_params", "initial_state", "mesh_aggregate",
    "project_tensor", "pyramid_operators", "reconstruct", "render_sources", "render_state",
    "sample_pixel_aligned", "update_gaussians", "update_vertices", "vertex_residual",
]
