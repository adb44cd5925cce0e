"""Synthetic plate-like image generation for desk-scale experiments.

Renders alphanumeric text on bordered, coloured rectangles. Full-scale
plate corpora cannot ship with the repository, so these fixtures back the
smoke tests, the scaled-proxy experiments, and the demos.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import DegradationSpec, PatchPair, extract_patch_pair

PLATE_CHARS = "ABCDEFGHJKLMNPRSTUVWXYZ0123456789"

PALETTE = [
    ((18, 63, 161), (255, 255, 255)),   # blue / white
    ((250, 204, 22), (20, 20, 20)),     # yellow / black
    ((240, 240, 240), (25, 25, 25)),    # white / black
    ((22, 120, 60), (255, 255, 255)),   # green / white
]


def random_plate_text(rng: np.random.Generator, length: int = 7) -> str:
    return "".join(PLATE_CHARS[i] for i in rng.integers(0, len(PLATE_CHARS), size=length))


def render_plate(
    text: str,
    height: int = 64,
    width: int = 256,
    palette_index: int = 0,
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw a plate: coloured ground, darker border, centred text.

    Returns a (3, height, width) float array in [0, 1]. ``jitter`` adds
    mild per-plate brightness variation so renders are not all identical.
    """
    bg, fg = PALETTE[palette_index % len(PALETTE)]
    if jitter and rng is not None:
        shift = rng.integers(-int(40 * jitter), int(40 * jitter) + 1, size=3)
        bg = tuple(int(np.clip(c + s, 0, 255)) for c, s in zip(bg, shift))
    img = Image.new("RGB", (width, height), bg)
    draw = ImageDraw.Draw(img)
    border = max(2, height // 16)
    dark = tuple(max(0, c - 60) for c in bg)
    draw.rectangle([0, 0, width - 1, height - 1], outline=dark, width=border)
    font = ImageFont.load_default(size=int(height * 0.62))
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    x = (width - (right - left)) // 2 - left
    y = (height - (bottom - top)) // 2 - top
    draw.text((x, y), text, font=font, fill=fg)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def make_synthetic_plates(
    n: int, seed: int = 0, height: int = 64, width: int = 256
) -> list[tuple[np.ndarray, str]]:
    """Render ``n`` (image, text) plates with varied palettes and texts."""
    rng = np.random.default_rng(seed)
    plates = []
    for i in range(n):
        text = random_plate_text(rng)
        img = render_plate(
            text, height=height, width=width,
            palette_index=int(rng.integers(len(PALETTE))), jitter=0.5, rng=rng,
        )
        plates.append((img, text))
    return plates


def make_synthetic_patch_pairs(
    n_patches: int,
    spec: DegradationSpec,
    hr_patch_size: int = 64,
    seed: int = 0,
    plate_height: int = 64,
    plate_width: int = 256,
) -> list[PatchPair]:
    """Random plate crops degraded into aligned HR/LR pairs."""
    rng = np.random.default_rng(seed)
    n_plates = max(1, -(-n_patches // 4))
    plates = make_synthetic_plates(n_plates, seed=seed, height=plate_height, width=plate_width)
    pairs = []
    for i in range(n_patches):
        img, text = plates[i % len(plates)]
        _, h, w = img.shape
        y = int(rng.integers(0, h - hr_patch_size + 1))
        x = int(rng.integers(0, w - hr_patch_size + 1))
        pairs.append(
            extract_patch_pair(img, spec, hr_patch_size, (y, x), record_id=f"synth_{i:05d}:{text}")
        )
    return pairs


def write_synthetic_dataset(
    directory: str | Path,
    n_train: int = 8,
    n_val: int = 2,
    n_test: int = 2,
    seed: int = 0,
    height: int = 64,
    width: int = 256,
) -> Path:
    """Write plate PNGs plus a JSON-lines manifest; returns the manifest path."""
    from .data import save_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    plates = make_synthetic_plates(n_train + n_val + n_test, seed=seed, height=height, width=width)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i, ((img, text), split) in enumerate(zip(plates, splits)):
            name = f"plate_{i:04d}.png"
            save_image(img, directory / name)
            fh.write(json.dumps(
                {"path": name, "plate_text": text, "split": split, "source_tag": "synthetic"}
            ) + "\n")
    return manifest
