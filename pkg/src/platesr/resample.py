"""Separable cubic-convolution resampling.

Implements the Catmull-Rom bicubic kernel (a = -0.5) with an optional
antialias mode that widens the kernel support by the downscale factor,
matching the behaviour of common image toolchains. All arithmetic is done
in float64; borders are handled by folding out-of-range taps onto the edge
pixel (replicate padding).
"""

from __future__ import annotations

import numpy as np

CATMULL_ROM_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    """Evaluate the two-lobe cubic convolution kernel at offsets ``x``."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
    far = a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
    out = np.where(x < 1.0, near, np.where(x < 2.0, far, 0.0))
    return out


def resample_weights(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Build the (n_out, n_in) weight matrix for one axis.

    Output sample i is centred at (i + 0.5) * n_in / n_out - 0.5 on the
    input grid. When downscaling with ``antialias`` the kernel is stretched
    by the scale factor; rows are normalised to sum to 1, so constants are
    reproduced exactly.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("axis sizes must be positive")
    scale = n_in / n_out
    fscale = max(scale, 1.0) if antialias else 1.0
    support = 2.0 * fscale

    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.ceil(center - support))
        hi = int(np.floor(center + support))
        taps = np.arange(lo, hi + 1)
        w = cubic_kernel((taps - center) / fscale)
        w = w / w.sum()
        clipped = np.clip(taps, 0, n_in - 1)
        np.add.at(weights[i], clipped, w)
    return weights


def resize_bicubic(
    image: np.ndarray,
    out_h: int,
    out_w: int,
    antialias: bool = True,
) -> np.ndarray:
    """Resize an (H, W) or (C, H, W) image with the Catmull-Rom kernel.

    Returns float64. Values are not clipped; cubic interpolation may
    overshoot the input range.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return _resize_2d(img, out_h, out_w, antialias)
    if img.ndim == 3:
        return np.stack([_resize_2d(ch, out_h, out_w, antialias) for ch in img])
    raise ValueError(f"expected 2-D or 3-D image, got shape {img.shape}")


def _resize_2d(img: np.ndarray, out_h: int, out_w: int, antialias: bool) -> np.ndarray:
    h, w = img.shape
    w_rows = resample_weights(h, out_h, antialias) if out_h != h else None
    w_cols = resample_weights(w, out_w, antialias) if out_w != w else None
    out = img
    if w_rows is not None:
        out = w_rows @ out
    if w_cols is not None:
        out = out @ w_cols.T
    return np.ascontiguousarray(out)


def downscale(image: np.ndarray, factor: int, antialias: bool = True) -> np.ndarray:
    """Downscale by an integer factor; spatial dims must divide evenly."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w = image.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} not divisible by factor {factor}")
    return resize_bicubic(image, h // factor, w // factor, antialias=antialias)


def upscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Upscale by an integer factor (plain bicubic; antialias is a no-op)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w = image.shape[-2:]
    return resize_bicubic(image, h * factor, w * factor, antialias=False)


def nearest_upscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upscale (each pixel replicated factor x factor)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return np.repeat(np.repeat(image, factor, axis=-2), factor, axis=-1)
