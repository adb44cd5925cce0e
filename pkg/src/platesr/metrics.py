"""Image fidelity metrics and degradation diagnostics.

PSNR and SSIM are computed on [0, 1] float images, either over RGB
channels or on the BT.601 luminance channel. LPIPS is adapter-only: the
perceptual network is supplied by the caller and never emulated here.
The distortion maps are documented reconstructions used for qualitative
ordering, not standardised measures.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0

# BT.601 luma coefficients on [0, 1] floats
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_float_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or (C, H, W) image, got shape {arr.shape}")
    return arr


def luma(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance of a (3, H, W) image; 2-D input passes through."""
    arr = _as_float_image(img)
    if arr.ndim == 2:
        return arr
    if arr.shape[0] != 3:
        raise ValueError(f"expected 3 channels, got {arr.shape[0]}")
    r, g, b = LUMA_WEIGHTS
    return r * arr[0] + g * arr[1] + b * arr[2]


def psnr(a, b, luma_only: bool = False, cap_db: float = PSNR_CAP_DB) -> float:
    """10*log10(1/MSE) in dB for [0, 1] images, capped for identical pairs."""
    x, y = _as_float_image(a), _as_float_image(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if luma_only:
        x, y = luma(x), luma(y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return cap_db
    return min(cap_db, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_single(x: np.ndarray, y: np.ndarray) -> float:
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    pad = SSIM_WINDOW // 2

    def filt(z):
        # interior values are padding-independent; borders are cropped below
        return ndimage.correlate(z, win, mode="constant")[pad:-pad, pad:-pad]

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, luma_only: bool = False) -> float:
    """Mean local SSIM (Gaussian 11x11 window, sigma 1.5, K1/K2 = 0.01/0.03, L = 1).

    RGB inputs are scored per channel and averaged unless ``luma_only``.
    """
    x, y = _as_float_image(a), _as_float_image(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than SSIM window ({SSIM_WINDOW})")
    if luma_only:
        return _ssim_single(luma(x), luma(y))
    if x.ndim == 2:
        return _ssim_single(x, y)
    return float(np.mean([_ssim_single(xc, yc) for xc, yc in zip(x, y)]))


LpipsAdapter = Callable[[np.ndarray, np.ndarray], float]


def lpips(a, b, adapter: LpipsAdapter | None) -> float:
    """Perceptual distance via a registered external adapter (lower = better)."""
    if adapter is None:
        raise ValueError("no LPIPS adapter registered")
    return float(adapter(_as_float_image(a), _as_float_image(b)))


def contrast_metric(psnr_new: float, psnr_base: float) -> float:
    """Relative PSNR improvement (new - base) / base; positive favours new."""
    if psnr_base <= 0:
        raise ValueError(f"baseline PSNR must be positive, got {psnr_base}")
    return (psnr_new - psnr_base) / psnr_base


# ---------------------------------------------------------------------------
# Distortion maps (reconstructed definitions; used for qualitative ordering)
# ---------------------------------------------------------------------------

BLUR_ENERGY_SCALE = 50.0
BLOCK_SIZE = 8


@dataclass
class DistortionMaps:
    noise_map: np.ndarray
    blur_map: np.ndarray
    compression_map: np.ndarray


def distortion_maps(img, ref=None) -> DistortionMaps:
    """Per-pixel noise / blur / blockiness intensity maps.

    noise: local mean of the squared residual against a 3x3 median smooth.
    blur: inverse local Laplacian energy, 1 / (1 + 50 * E), so flatter
    (blurrier) regions score higher; the scale is fixed so maps are
    comparable across images.
    compression: per 8x8 cell, the ratio of mean gradient magnitude on
    block boundaries to the interior mean, broadcast to the cell.
    ``ref`` is accepted for signature compatibility and unused.
    """
    gray = luma(_as_float_image(img))

    residual = gray - ndimage.median_filter(gray, size=3)
    noise = ndimage.uniform_filter(residual**2, size=3)

    lap = ndimage.laplace(gray)
    energy = ndimage.uniform_filter(lap**2, size=5)
    blur = 1.0 / (1.0 + BLUR_ENERGY_SCALE * energy)

    comp = _blockiness_map(gray)
    return DistortionMaps(noise_map=noise, blur_map=blur, compression_map=comp)


def _blockiness_map(gray: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    gy = np.abs(np.diff(gray, axis=0, prepend=gray[:1]))
    gx = np.abs(np.diff(gray, axis=1, prepend=gray[:, :1]))
    grad = gx + gy
    boundary = np.zeros_like(gray, dtype=bool)
    boundary[BLOCK_SIZE::BLOCK_SIZE, :] = True
    boundary[:, BLOCK_SIZE::BLOCK_SIZE] = True
    out = np.zeros_like(gray)
    eps = 1e-8
    for y0 in range(0, h, BLOCK_SIZE):
        for x0 in range(0, w, BLOCK_SIZE):
            cell = (slice(y0, min(y0 + BLOCK_SIZE, h)), slice(x0, min(x0 + BLOCK_SIZE, w)))
            g, m = grad[cell], boundary[cell]
            if m.any() and (~m).any():
                ratio = g[m].mean() / (g[~m].mean() + eps)
            else:
                ratio = 0.0
            out[cell] = ratio
    return out


def write_map_png(map_arr: np.ndarray, path: str | Path) -> None:
    """Write a nonnegative map as a 16-bit grayscale PNG (scaled to its max)."""
    from PIL import Image

    arr = np.asarray(map_arr, dtype=np.float64)
    peak = arr.max()
    scaled = arr / peak if peak > 0 else arr
    Image.fromarray((scaled * 65535.0).round().astype(np.uint16)).save(path)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

FIDELITY_KEYS = ("psnr", "psnr_y", "ssim", "ssim_y", "lpips")


@dataclass
class MetricsReport:
    """Per-image fidelity records plus median/std aggregates."""

    per_image: list[dict]
    aggregate: dict[str, dict[str, float]]
    unavailable: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_per_image(cls, per_image: Sequence[dict], unavailable: dict[str, str] | None = None):
        return cls(
            per_image=list(per_image),
            aggregate=aggregate_metrics(per_image),
            unavailable=dict(unavailable or {}),
        )

    def to_dict(self) -> dict:
        return {
            "per_image": self.per_image,
            "aggregate": self.aggregate,
            "unavailable": self.unavailable,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            per_image=d["per_image"],
            aggregate=d["aggregate"],
            unavailable=d.get("unavailable", {}),
        )


def aggregate_metrics(per_image: Sequence[dict]) -> dict[str, dict[str, float]]:
    """Median and (population) std per metric over the non-null records."""
    agg: dict[str, dict[str, float]] = {}
    for key in FIDELITY_KEYS:
        values = [rec[key] for rec in per_image if rec.get(key) is not None]
        if values:
            agg[key] = {"median": float(np.median(values)), "std": float(np.std(values))}
    return agg


def fidelity_record(image_id, sr, hr, lpips_adapter: LpipsAdapter | None = None) -> dict:
    """All fidelity metrics for one (SR, HR) pair; lpips null without adapter."""
    rec = {
        "id": image_id,
        "psnr": psnr(sr, hr),
        "psnr_y": psnr(sr, hr, luma_only=True),
        "ssim": ssim(sr, hr),
        "ssim_y": ssim(sr, hr, luma_only=True),
        "lpips": None,
    }
    if lpips_adapter is not None:
        rec["lpips"] = lpips(sr, hr, lpips_adapter)
    return rec


def format_median_std(agg_entry: dict[str, float], digits: int = 2) -> str:
    """Render an aggregate as the reporting convention 'median (± std)'."""
    return f"{agg_entry['median']:.{digits}f} (± {agg_entry['std']:.{digits}f})"
