"""Image perturbations for robustness sweeps, plus the 224 center-crop policy.

All operations take and return float64 pixel buffers in [0, 1], shaped
(H, W) or (H, W, C), and preserve the input's dimensions.  They are pure:
given the same parameters (and seed, for noise) the output is identical.
Noise sigma is expressed in normalized [0, 1] pixel units, so sigma = 0.01
is about 2.55 levels of an 8-bit image.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import EncodeError, ImageDecodeError, InvalidSigma

CROP_SIZE = 224


class PerturbationKind(enum.Enum):
    GAUSSIAN_NOISE = "noise"
    GAUSSIAN_BLUR = "blur"
    JPEG = "jpeg"


@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation: sigma for noise/blur, integer quality for JPEG."""

    kind: PerturbationKind
    param: float
    seed: int = 0

    def __post_init__(self):
        if self.kind in (PerturbationKind.GAUSSIAN_NOISE, PerturbationKind.GAUSSIAN_BLUR):
            if not self.param > 0:
                raise InvalidSigma(f"{self.kind.value} sigma must be > 0, got {self.param}")
        else:
            q = self.param
            if q != int(q) or not 1 <= int(q) <= 100:
                raise ValueError(f"JPEG quality must be an integer in [1, 100], got {q}")


def apply_perturbation(image: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    if spec.kind is PerturbationKind.GAUSSIAN_NOISE:
        return perturb_gaussian_noise(image, spec.param, spec.seed)
    if spec.kind is PerturbationKind.GAUSSIAN_BLUR:
        return perturb_gaussian_blur(image, spec.param)
    return perturb_jpeg(image, int(spec.param))


def _check_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise ValueError("image must be a nonempty (H, W) or (H, W, C) buffer")
    return arr


def perturb_gaussian_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add seeded per-channel Gaussian noise of std sigma, then clamp to [0, 1]."""
    if not sigma > 0:
        raise InvalidSigma(f"noise sigma must be > 0, got {sigma}")
    arr = _check_image(image)
    rng = np.random.default_rng(seed)
    return np.clip(arr + rng.normal(0.0, sigma, size=arr.shape), 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian of radius ceil(3*sigma), normalized to sum 1."""
    if not sigma > 0:
        raise InvalidSigma(f"blur sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    ks = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(ks**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")  # clamp-to-edge
    out = np.zeros_like(arr)
    length = arr.shape[axis]
    for j, w in enumerate(kernel):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(j, j + length)
        out += w * padded[tuple(sl)]
    return out


def perturb_gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with clamp-to-edge handling."""
    arr = _check_image(image)
    kernel = gaussian_kernel(sigma)
    return _convolve_axis(_convolve_axis(arr, kernel, axis=0), kernel, axis=1)


def perturb_jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip through a baseline JPEG encode at the given quality."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    arr = _check_image(image)
    data = encode_jpeg(arr, int(quality))
    decoded = decode_image(data)
    if arr.ndim == 2 and decoded.ndim == 3:
        decoded = decoded[:, :, 0]
    return decoded


def center_crop(image: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Resize (bilinear) so the shorter side reaches `size` when below it,
    then take the centered size x size crop."""
    arr = _check_image(image)
    h, w = arr.shape[:2]
    short = min(h, w)
    if short < size:
        scale = size / short
        new_h = max(size, round(h * scale))
        new_w = max(size, round(w * scale))
        arr = _resize_bilinear(arr, new_h, new_w)
        h, w = new_h, new_w
    top = (h - size) // 2
    left = (w - size) // 2
    return arr[top : top + size, left : left + size].copy()


def _resize_bilinear(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    # PIL's float32 path gives exact bilinear filtering per channel.
    if arr.ndim == 2:
        img = Image.fromarray(arr.astype(np.float32), mode="F")
        return np.asarray(img.resize((new_w, new_h), Image.BILINEAR), dtype=np.float64)
    channels = [
        np.asarray(
            Image.fromarray(arr[:, :, c].astype(np.float32), mode="F").resize(
                (new_w, new_h), Image.BILINEAR
            ),
            dtype=np.float64,
        )
        for c in range(arr.shape[2])
    ]
    return np.stack(channels, axis=2)


# --- codecs used by the perturb CLI ---

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def decode_image(data: bytes) -> np.ndarray:
    """Decode encoded image bytes to a float buffer in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return from_uint8(np.asarray(img.convert("RGB")))
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc


def encode_jpeg(image: np.ndarray, quality: int) -> bytes:
    raw = to_uint8(image)
    mode = "L" if raw.ndim == 2 else "RGB"
    buf = io.BytesIO()
    try:
        Image.fromarray(raw, mode=mode).save(buf, format="JPEG", quality=quality)
    except Exception as exc:
        raise EncodeError(f"JPEG encode failed: {exc}") from exc
    return buf.getvalue()


def encode_png(image: np.ndarray) -> bytes:
    raw = to_uint8(image)
    mode = "L" if raw.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(raw, mode=mode).save(buf, format="PNG")
    return buf.getvalue()
