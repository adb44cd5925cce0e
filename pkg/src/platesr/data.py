"""Dataset ingestion and patch-pair extraction.

Plate images enter through a JSON-lines manifest (one record per line with
keys ``path``, optional ``plate_text`` and ``split``). Aligned HR/LR patch
pairs are produced by cropping the HR image and degrading the crop by
bicubic downscaling; batches are served with a seeded deterministic
shuffle.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .resample import downscale

log = logging.getLogger(__name__)

VALID_SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    """Raised for missing or malformed manifest entries."""


@dataclass
class ImageRecord:
    """One dataset entry: an image path plus optional label and split."""

    path: Path
    plate_text: str | None = None
    split: str = "train"
    source_tag: str = ""

    def __post_init__(self):
        self.path = Path(self.path)
        if self.split not in VALID_SPLITS:
            raise ManifestError(f"invalid split {self.split!r}, expected one of {VALID_SPLITS}")


@dataclass
class DegradationSpec:
    """How HR content is degraded to LR: bicubic downscale by ``scale``."""

    scale: int = 8
    kernel: str = "bicubic"
    antialias: bool = True

    def __post_init__(self):
        if self.kernel != "bicubic":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.scale not in (4, 8) and not _power_of_two(self.scale):
            raise ValueError(f"scale must be 4 or a power of two, got {self.scale}")

    def key(self) -> str:
        """Stable hash of the spec, used to tag patch caches."""
        raw = f"{self.scale}:{self.kernel}:{int(self.antialias)}"
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


@dataclass
class PatchPair:
    """Aligned HR/LR patch tensors, values in [0, 1], CHW layout."""

    hr: np.ndarray
    lr: np.ndarray
    scale: int
    origin: tuple[str, tuple[int, int]]

    def __post_init__(self):
        c, p, p2 = self.hr.shape
        cl, q, q2 = self.lr.shape
        if c != 3 or cl != 3:
            raise ValueError("patches must have 3 channels")
        if p != p2 or q != q2:
            raise ValueError("patches must be square")
        if p != self.scale * q:
            raise ValueError(f"hr size {p} != scale {self.scale} * lr size {q}")


@dataclass
class Batch:
    """A batch of patch pairs; ``partial`` marks a trailing short batch."""

    pairs: list[PatchPair]
    partial: bool = False

    def __len__(self) -> int:
        return len(self.pairs)

    def tensors(self):
        """Stack into (lr, hr) float32 torch tensors of shape (B, 3, ., .)."""
        import torch

        lr = torch.from_numpy(np.stack([p.lr for p in self.pairs])).float()
        hr = torch.from_numpy(np.stack([p.hr for p in self.pairs])).float()
        return lr, hr


def _power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def load_manifest(path: str | Path) -> list[ImageRecord]:
    """Parse a JSON-lines manifest into records, preserving file order.

    Image paths are resolved relative to the manifest's directory and are
    not opened here; decodability is checked lazily at load time. An empty
    manifest yields an empty list with a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: list[ImageRecord] = []
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"manifest line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"manifest line {lineno}: expected an object")
            if "path" not in obj:
                raise ManifestError(f"manifest line {lineno}: missing path")
            unknown = set(obj) - {"path", "plate_text", "split", "source_tag"}
            if unknown:
                raise ManifestError(f"manifest line {lineno}: unknown keys {sorted(unknown)}")
            img_path = Path(obj["path"])
            if not img_path.is_absolute():
                img_path = base / img_path
            try:
                records.append(
                    ImageRecord(
                        path=img_path,
                        plate_text=obj.get("plate_text"),
                        split=obj.get("split", "train"),
                        source_tag=obj.get("source_tag", ""),
                    )
                )
            except ManifestError as exc:
                raise ManifestError(f"manifest line {lineno}: {exc}") from exc
    if not records:
        log.warning("manifest %s is empty", path)
    else:
        log.info("manifest %s: %d records, splits %s", path, len(records), split_counts(records))
    return records


def split_counts(records: Iterable[ImageRecord]) -> dict[str, int]:
    """Number of records per split, omitting empty splits."""
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.split] = counts.get(rec.split, 0) + 1
    return counts


def load_image(path: str | Path) -> np.ndarray:
    """Decode an RGB image file to a (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write a (3, H, W) or (H, W) array in [0, 1] as an 8-bit image file."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def extract_patch_pair(
    image: np.ndarray,
    spec: DegradationSpec,
    hr_patch_size: int,
    offset: tuple[int, int],
    record_id: str = "",
) -> PatchPair:
    """Crop an HR patch at ``offset`` (y, x) and degrade it to its LR pair.

    The HR patch is the exact crop; the LR patch is its bicubic downscale
    by 1/scale, clipped back to [0, 1] (cubic overshoot). ``hr_patch_size``
    must be divisible by the scale and the crop window must lie fully
    inside the image.
    """
    if hr_patch_size % spec.scale:
        raise ValueError(f"hr_patch_size {hr_patch_size} not divisible by scale {spec.scale}")
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {image.shape}")
    y, x = offset
    _, h, w = image.shape
    if y < 0 or x < 0 or y + hr_patch_size > h or x + hr_patch_size > w:
        raise ValueError(
            f"crop window {hr_patch_size}@({y},{x}) out of bounds for {h}x{w} image"
        )
    hr = np.ascontiguousarray(image[:, y : y + hr_patch_size, x : x + hr_patch_size])
    lr = np.clip(downscale(hr, spec.scale, antialias=spec.antialias), 0.0, 1.0)
    return PatchPair(hr=hr, lr=lr, scale=spec.scale, origin=(record_id, (y, x)))


def iter_patch_offsets(
    image_hw: tuple[int, int], patch_size: int, stride: int | None = None
) -> Iterator[tuple[int, int]]:
    """Yield top-left offsets of a patch grid; default stride is half a patch."""
    h, w = image_hw
    if stride is None:
        stride = max(1, patch_size // 2)
    if patch_size > h or patch_size > w:
        return
    ys = list(range(0, h - patch_size + 1, stride))
    xs = list(range(0, w - patch_size + 1, stride))
    # always cover the bottom/right border
    if ys[-1] != h - patch_size:
        ys.append(h - patch_size)
    if xs[-1] != w - patch_size:
        xs.append(w - patch_size)
    for y in ys:
        for x in xs:
            yield (y, x)


def extract_patches(
    records: Sequence[ImageRecord],
    spec: DegradationSpec,
    hr_patch_size: int,
    stride: int | None = None,
) -> list[PatchPair]:
    """Extract the full patch grid from every record.

    Training sets use the default overlapping stride (patch/2); pass
    ``stride=hr_patch_size`` for non-overlapping validation/test patches.
    """
    pairs: list[PatchPair] = []
    for rec in records:
        img = load_image(rec.path)
        for off in iter_patch_offsets(img.shape[1:], hr_patch_size, stride):
            pairs.append(extract_patch_pair(img, spec, hr_patch_size, off, record_id=str(rec.path)))
    return pairs


def make_batches(
    pairs: Sequence[PatchPair], batch_size: int, seed: int
) -> Iterator[Batch]:
    """Yield batches over a seeded shuffle of ``pairs``.

    The shuffle is a permutation (every pair appears exactly once); the
    final short batch, if any, is emitted with ``partial=True``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        log.warning("make_batches called with an empty pair list")
        return
    order = np.random.default_rng(seed).permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(pairs=[pairs[i] for i in idx], partial=len(idx) < batch_size)


# ---------------------------------------------------------------------------
# Optional on-disk patch cache
# ---------------------------------------------------------------------------

CACHE_INDEX = "index.json"


def save_patch_cache(
    pairs: Sequence[PatchPair], directory: str | Path, spec: DegradationSpec, seed: int
) -> Path:
    """Serialise pairs into a directory with an index recording provenance."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(pairs):
        np.savez_compressed(
            directory / f"pair_{i:06d}.npz",
            hr=pair.hr.astype(np.float32),
            lr=pair.lr.astype(np.float32),
            scale=pair.scale,
            record_id=pair.origin[0],
            offset=np.asarray(pair.origin[1]),
        )
    index = {"spec_hash": spec.key(), "scale": spec.scale, "seed": seed, "count": len(pairs)}
    with open(directory / CACHE_INDEX, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
    return directory


def load_patch_cache(directory: str | Path) -> tuple[list[PatchPair], dict]:
    """Load a cache written by :func:`save_patch_cache`; returns (pairs, index)."""
    directory = Path(directory)
    index_path = directory / CACHE_INDEX
    if not index_path.is_file():
        raise FileNotFoundError(f"no cache index at {index_path}")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    pairs = []
    for i in range(index["count"]):
        with np.load(directory / f"pair_{i:06d}.npz") as z:
            pairs.append(
                PatchPair(
                    hr=z["hr"].astype(np.float64),
                    lr=z["lr"].astype(np.float64),
                    scale=int(z["scale"]),
                    origin=(str(z["record_id"]), tuple(int(v) for v in z["offset"])),
                )
            )
    return pairs, index
