"""Synthetic data, losses, metrics, training and evaluation."""

from .evaluate import (EvalConfig, MetricsRow, evaluate, mean_metric, noisy_sources, read_metrics, render_gom,
                       score, self_check_rows, write_metrics)
from .losses import (LossWeights, TermCounter, l1, laplacian_energy, loss_terms, loss_total, mask_iou, psnr,
                     ssim, ssim_map, ssim_reference)
from .scenes import Scene, View, cached_subject, sample_scene
from .synthetic import (SyntheticSubject, make_synthetic_subject, random_pose, render_reference,
                        render_template, view_camera)
from .train import TrainConfig, checkpoint_meta, new_model, scene_loss, train, train_step, training_scene

__all__ = [
    "EvalConfig", "LossWeights", "MetricsRow", "Scene", "SyntheticSubject", "TermCounter", "TrainConfig", "View",
    "cached_subject", "checkpoint_meta", "evaluate", "l1", "laplacian_energy", "loss_terms", "loss_total",
    "make_synthetic_subject", "mask_iou", "mean_metric", "new_model", "noisy_sources", "psnr", "random_pose",
    "read_metrics", "render_gom", "render_reference", "render_template", "sample_scene", "scene_loss", "score",
    "self_check_rows", "ssim", "ssim_map", "ssim_reference", "train", "train_step", "training_scene",
    "view_camera", "write_metrics",
]
