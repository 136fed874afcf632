"""Image decode/encode, feature-network preprocessing, and visualization export.

The engine's input convention: RGB order, pixel scale 0-255, per-channel
means subtracted, no BGR swap and no /255 scaling. Weight files must be
produced for this convention (the converter handles source-side rewrites).
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

# Per-channel RGB means subtracted before the feature network.
CHANNEL_MEANS = (123.68, 116.779, 103.939)


def decode(path) -> np.ndarray:
    """Read a PNG or JPEG into an (h, w, 3) uint8 array; alpha is dropped."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ValueError(f"cannot decode image {path}: {e}") from e


def encode(image: np.ndarray, path) -> None:
    """Write an (h, w, 3) uint8 array; format chosen from the extension."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (h,w,3) uint8 image, got {image.shape} {image.dtype}")
    Image.fromarray(image, mode="RGB").save(path)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center alignment, edges clamped."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate target size {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy[:, None, None] if img.ndim == 3 else fy[:, None]
    fx = fx[None, :, None] if img.ndim == 3 else fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def _target_dims(h: int, w: int, size: int) -> tuple[int, int]:
    # size applies to the larger dimension; aspect ratio is kept.
    if size < 1:
        raise ValueError(f"degenerate target size {size}")
    scale = size / max(h, w)
    return max(1, round(h * scale)), max(1, round(w * scale))


def preprocess(image: np.ndarray, size: int | None = None) -> np.ndarray:
    """uint8 (h,w,3) -> mean-subtracted float32 (1,3,H,W), optionally resized."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (h,w,3) image, got shape {image.shape}")
    x = np.asarray(image, dtype=np.float32)
    if size is not None:
        th, tw = _target_dims(x.shape[0], x.shape[1], size)
        x = resize_bilinear(x, th, tw)
    x = x - np.asarray(CHANNEL_MEANS, dtype=np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1)[None])


def deprocess(tensor: np.ndarray) -> np.ndarray:
    """float32 (1,3,H,W) -> uint8 (h,w,3): add means back, clamp to [0,255]."""
    if tensor.ndim != 4 or tensor.shape[0] != 1 or tensor.shape[1] != 3:
        raise ValueError(f"expected (1,3,h,w) tensor, got shape {tensor.shape}")
    x = tensor[0].transpose(1, 2, 0) + np.asarray(CHANNEL_MEANS, dtype=np.float32)
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def export_laplacian_image(lap: np.ndarray, path) -> None:
    """Save |values| min-max mapped to 0-255 grayscale; all-equal maps to 128."""
    arr = np.asarray(lap, dtype=np.float32)
    if arr.ndim == 4:
        if arr.shape[0] != 1 or arr.shape[1] != 1:
            raise ValueError(f"expected single-channel tensor, got {arr.shape}")
        arr = arr[0, 0]
    elif arr.ndim != 2:
        raise ValueError(f"expected (h,w) or (1,1,h,w) values, got {arr.shape}")
    mag = np.abs(arr)
    lo, hi = float(mag.min()), float(mag.max())
    if hi <= lo:
        gray = np.full(arr.shape, 128, dtype=np.uint8)
    else:
        gray = np.rint((mag - lo) * (255.0 / (hi - lo))).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)
