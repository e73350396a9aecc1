"""PNG screenshot I/O and resize-to-model-input preprocessing."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .datasets import DatasetIOError
from .files import atomic_write_bytes


def save_image(img: np.ndarray, path) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_image(path) -> np.ndarray:
    """Read any Pillow-decodable raster as float RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DatasetIOError(f"cannot read screenshot {path}: {exc}") from exc
    return arr / 255.0


def preprocess(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to ``size`` x ``size`` (no aspect padding), clamp to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.shape[:2] != (size, size):
        chans = [
            np.asarray(Image.fromarray(np.ascontiguousarray(img[:, :, c], dtype=np.float32)).resize((size, size), Image.BILINEAR))
            for c in range(3)
        ]
        img = np.stack(chans, axis=-1).astype(np.float64)
    return np.clip(img, 0.0, 1.0)
