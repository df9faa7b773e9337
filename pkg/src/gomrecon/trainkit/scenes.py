"""Seeded multi-view scenes of synthetic subjects."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..reconstruct import SourceSet
from ..rig import Pose, Rig
from ..splat import CameraModel
from .synthetic import SyntheticSubject, make_synthetic_subject, random_pose, render_reference, view_camera


@dataclass(frozen=True)
class View:
    image: np.ndarray
    mask: np.ndarray
    pose: Pose
    camera: CameraModel


@dataclass(frozen=True)
class Scene:
    subject_id: int
    rig: Rig
    sources: list
    targets: list
    subject: SyntheticSubject | None = None  # set for synthetic scenes

    def source_set(self) -> SourceSet:
        return SourceSet([v.image for v in self.sources], [v.mask for v in self.sources],
                         [v.pose for v in self.sources], [v.camera for v in self.sources])


@lru_cache(maxsize=64)
def cached_subject(seed: int) -> SyntheticSubject:
    return make_synthetic_subject(seed)


def _view(subject, pose, azimuth, elevation, resolution) -> View:
    cam = view_camera(azimuth, elevation, resolution)
    image, mask = render_reference(subject, pose, cam)
    return View(image, mask, pose, cam)


def sample_scene(subject_seed: int, rng: np.random.Generator, n_sources: int = 3, n_targets: int = 1,
                 resolution: int = 64, pose_scale: float = 1.0) -> Scene:
    """Sources spread around the subject in their own poses; targets in fresh poses and views."""
    subject = cached_subject(int(subject_seed))
    az0 = rng.uniform(0.0, 2 * np.pi)
    sources = []
    for n in range(n_sources):
        az = az0 + 2 * np.pi * n / n_sources + rng.uniform(-0.3, 0.3)
        el = rng.uniform(-0.1, 0.3)
        sources.append(_view(subject, random_pose(subject.rig, rng, pose_scale), az, el, resolution))
    targets = []
    for _ in range(n_targets):
        az, el = rng.uniform(0.0, 2 * np.pi), rng.uniform(-0.1, 0.3)
        targets.append(_view(subject, random_pose(subject.rig, rng, pose_scale), az, el, resolution))
    return Scene(subject.seed, subject.rig, sources, targets, subject)
