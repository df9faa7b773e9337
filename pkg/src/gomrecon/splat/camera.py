"""Pinhole camera: world-to-camera ``E``, intrinsics ``K``, pixel centres at integers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    K: np.ndarray  # (3, 3)
    E: np.ndarray  # (4, 4) world -> camera, +z forward, +y down
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        E = np.asarray(self.E, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "E", E)
        R = E[:3, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation block is not orthonormal")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def fx(self):
        return self.K[0, 0]

    @property
    def fy(self):
        return self.K[1, 1]

    @property
    def cx(self):
        return self.K[0, 2]

    @property
    def cy(self):
        return self.K[1, 2]

    @property
    def R(self) -> np.ndarray:
        return self.E[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.E[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def project_points(self, X) -> tuple[np.ndarray, np.ndarray]:
        """World points to pixel coordinates and camera depth."""
        m = np.asarray(X) @ self.R.T + self.t
        z = m[..., 2]
        uv = np.stack([self.fx * m[..., 0] / z + self.cx, self.fy * m[..., 1] / z + self.cy], -1)
        return uv, z

    def scaled(self, width: int, height: int) -> CameraModel:
        sx, sy = width / self.width, height / self.height
        K = self.K.copy()
        K[0] *= sx
        K[1] *= sy
        # keep integer pixel centres aligned with the continuous image
        K[0, 2] = (self.cx + 0.5) * sx - 0.5
        K[1, 2] = (self.cy + 0.5) * sy - 0.5
        return CameraModel(K, self.E, width, height)

    def to_json(self) -> dict:
        return {"K": self.K.tolist(), "E": self.E.tolist(), "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_json(cls, d: dict) -> CameraModel:
        for key in ("K", "E", "width", "height"):
            if key not in d:
                raise KeyError(f"camera document is missing field {key!r}")
        return cls(np.array(d["K"]), np.array(d["E"]), int(d["width"]), int(d["height"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> CameraModel:
        return cls.from_json(json.loads(Path(path).read_text()))


def look_at(eye, target, up=(0.0, 1.0, 0.0), *, focal: float, width: int, height: int) -> CameraModel:
    """Camera at ``eye`` looking at ``target`` with world ``up`` pointing up in the image."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ eye
    K = np.array([[focal, 0, (width - 1) / 2], [0, focal, (height - 1) / 2], [0, 0, 1.0]])
    return CameraModel(K, E, width, height)


def orbit_camera(azimuth: float, elevation: float, radius: float, target, *, focal: float,
                 width: int, height: int) -> CameraModel:
    """Camera on a sphere around ``target``; azimuth 0 looks along -z from +z."""
    target = np.asarray(target, dtype=np.float64)
    eye = target + radius * np.array([np.sin(azimuth) * np.cos(elevation), np.sin(elevation),
                                      np.cos(azimuth) * np.cos(elevation)])
    return look_at(eye, target, focal=focal, width=width, height=height)
