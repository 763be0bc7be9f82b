"""Image loading and the crop policies used before encoding.

Global embeddings see the image resized so its shorter side is 224 and
center-cropped to 224x224.  Object embeddings see the normalized-box crop
from the original image, zero-padded to square, then resized to 224x224.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageReadError

IMAGE_SIZE = 224


def load_rgb(source) -> np.ndarray:
    """Decode a path or raw bytes to an RGB float array in [0, 1]."""
    try:
        if isinstance(source, (bytes, bytearray)):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(Path(source))
        with img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot decode image: {exc}") from exc


def to_uint8(image: np.ndarray) -> np.ndarray:
    return (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    pil = Image.fromarray(to_uint8(image))
    resized = pil.resize((width, height), resample=Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0


def global_view(image: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Shorter side to `size`, then central size x size window."""
    height, width = image.shape[:2]
    scale = size / min(height, width)
    new_w = max(size, int(round(width * scale)))
    new_h = max(size, int(round(height * scale)))
    resized = _resize(image, new_w, new_h)
    top = (new_h - size) // 2
    left = (new_w - size) // 2
    return resized[top : top + size, left : left + size, :]


def check_box(box) -> tuple[float, float, float, float]:
    values = tuple(float(v) for v in box)
    if len(values) != 4:
        raise ValueError(f"box must have 4 coordinates, got {len(values)}")
    x0, y0, x1, y1 = values
    if not all(np.isfinite(values)):
        raise ValueError("box coordinates must be finite")
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"box must satisfy 0 <= min < max <= 1, got {values}")
    return values


def object_view(image: np.ndarray, box, size: int = IMAGE_SIZE) -> np.ndarray:
    """Normalized-box crop, zero-padded to square, resized to size x size."""
    x0, y0, x1, y1 = check_box(box)
    height, width = image.shape[:2]
    px0 = int(np.floor(x0 * width))
    px1 = max(px0 + 1, int(np.ceil(x1 * width)))
    py0 = int(np.floor(y0 * height))
    py1 = max(py0 + 1, int(np.ceil(y1 * height)))
    crop = image[py0:min(py1, height), px0:min(px1, width), :]
    crop_h, crop_w = crop.shape[:2]
    side = max(crop_h, crop_w)
    padded = np.zeros((side, side, 3))
    top = (side - crop_h) // 2
    left = (side - crop_w) // 2
    padded[top : top + crop_h, left : left + crop_w, :] = crop
    return _resize(padded, size, size)
