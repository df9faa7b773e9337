"""8-bit sRGB PNG read/write for linear float images and masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, image: np.ndarray) -> None:
    """Write a linear RGB (H, W, 3) image, or an (H, W) mask stored without gamma."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        data = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
        Image.fromarray(data).save(Path(path), optimize=False)
        return
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{path}: expected (H, W, 3) or (H, W), got {image.shape}")
    data = np.round(linear_to_srgb(image) * 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path), optimize=False)


def read_png(path, mask: bool = False) -> np.ndarray:
    try:
        with Image.open(Path(path)) as im:
            data = np.asarray(im.convert("L" if mask else "RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: cannot read PNG ({exc})") from None
    return data if mask else srgb_to_linear(data)
