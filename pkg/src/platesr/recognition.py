"""OCR-based recognition evaluation.

Predictions come from a pluggable adapter (an external OCR engine is out
of scope); this module scores them against ground-truth plate strings:
exact match accuracy, Levenshtein similarity, character/word error rates,
and character-level precision/recall/F1 derived from the edit-distance
alignment. Strings are compared after stripping surrounding whitespace,
case preserved.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import DegradationSpec, ImageRecord, load_image
from .resample import downscale

log = logging.getLogger(__name__)


def levenshtein(a: str, b: str) -> int:
    """Minimal number of unit-cost insertions, deletions and substitutions."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein_alignment(truth: str, pred: str) -> dict[str, int]:
    """Edit distance plus the operation counts of one optimal alignment.

    Returns {distance, matches, substitutions, insertions, deletions};
    insertions are predicted characters with no truth counterpart.
    """
    n, m = len(truth), len(pred)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (truth[i - 1] != pred[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    counts = {"distance": int(dist[n, m]), "matches": 0, "substitutions": 0,
              "insertions": 0, "deletions": 0}
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (truth[i - 1] != pred[j - 1]):
            counts["matches" if truth[i - 1] == pred[j - 1] else "substitutions"] += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            counts["insertions"] += 1
            j -= 1
        else:
            counts["deletions"] += 1
            i -= 1
    return counts


def l_similarity(truth: str, pred: str) -> float:
    """Normalised similarity 1 - distance / max(len); both-empty counts as 1."""
    longest = max(len(truth), len(pred))
    if longest == 0:
        log.warning("l_similarity of two empty strings, defined as 1")
        return 1.0
    return 1.0 - levenshtein(truth, pred) / longest


class OcrAdapter(Protocol):
    """External OCR engine contract: image in, predicted text out."""

    name: str

    def __call__(self, image: np.ndarray) -> str: ...


@dataclass
class RecognitionReport:
    """Plate-recognition metrics mirroring the evaluation table columns."""

    ema: float
    l_sim: float
    cer: float
    wer: float
    precision: float
    recall: float
    f1: float
    per_plate: list[dict] = field(default_factory=list)
    skipped: int = 0
    adapter_name: str = ""

    def to_dict(self) -> dict:
        return {
            "ema": self.ema, "l_sim": self.l_sim, "cer": self.cer, "wer": self.wer,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "skipped": self.skipped, "adapter_name": self.adapter_name,
            "per_plate": self.per_plate,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def evaluate_plates(
    pairs: Sequence[tuple[str, str]], adapter_name: str = ""
) -> RecognitionReport:
    """Score (truth, predicted) string pairs.

    Plates with an empty truth string are skipped with a warning and
    counted in ``skipped``. CER is total edit distance over total truth
    length; WER is word-level edit distance over total truth word count
    (whitespace tokens); both are clipped to [0, 1] so all report fields
    are fractions. Precision/recall/F1 are micro-averaged over the
    character alignments: matches are true positives, substitutions count
    against both sides, insertions are false positives and deletions false
    negatives.
    """
    if not pairs:
        raise ValueError("no plates to evaluate")
    per_plate: list[dict] = []
    skipped = 0
    exact = 0
    sims: list[float] = []
    total_dist = total_len = 0
    word_dist = word_count = 0
    tp = fp = fn = 0
    for truth_raw, pred_raw in pairs:
        truth, pred = truth_raw.strip(), pred_raw.strip()
        if not truth:
            log.warning("skipping plate with empty ground truth (prediction %r)", pred)
            skipped += 1
            continue
        counts = levenshtein_alignment(truth, pred)
        per_plate.append({"truth": truth, "predicted": pred, "distance": counts["distance"]})
        exact += truth == pred
        sims.append(l_similarity(truth, pred))
        total_dist += counts["distance"]
        total_len += len(truth)
        truth_words, pred_words = truth.split(), pred.split()
        word_dist += _word_distance(truth_words, pred_words)
        word_count += len(truth_words)
        tp += counts["matches"]
        fp += counts["substitutions"] + counts["insertions"]
        fn += counts["substitutions"] + counts["deletions"]
    if not per_plate:
        raise ValueError("every plate had an empty ground truth")
    n = len(per_plate)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RecognitionReport(
        ema=exact / n,
        l_sim=float(np.mean(sims)),
        cer=min(1.0, total_dist / total_len),
        wer=min(1.0, word_dist / word_count),
        precision=precision,
        recall=recall,
        f1=f1,
        per_plate=per_plate,
        skipped=skipped,
        adapter_name=adapter_name,
    )


def _word_distance(a: list[str], b: list[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, start=1):
        cur = [i]
        for j, wb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (wa != wb)))
        prev = cur
    return prev[-1]


def run_ocr_eval(
    model,
    records: Sequence[ImageRecord],
    adapter: OcrAdapter,
    degradation: DegradationSpec,
) -> RecognitionReport:
    """Super-resolve each labelled record and score the adapter's reading.

    The record image is treated as the HR plate, cropped to a multiple of
    the scale, degraded to LR, and super-resolved; the adapter sees the SR
    output unchanged. Adapter failures yield an empty prediction and are
    counted rather than fatal.
    """
    import torch

    labelled = [r for r in records if r.plate_text]
    if len(labelled) < len(records):
        log.warning("%d records lack plate_text and are excluded", len(records) - len(labelled))
    if not labelled:
        raise ValueError("no records carry plate_text annotations")
    pairs = []
    s = degradation.scale
    for rec in labelled:
        hr = load_image(rec.path)
        _, h, w = hr.shape
        hr = hr[:, : h - h % s, : w - w % s]
        lr = np.clip(downscale(hr, s, antialias=degradation.antialias), 0.0, 1.0)
        lr_t = torch.from_numpy(lr).float().unsqueeze(0)
        if hasattr(model, "super_resolve"):
            sr = model.super_resolve(lr_t)[0].double().numpy()
        else:
            with torch.no_grad():
                sr = model(lr_t)[0].clamp(0.0, 1.0).double().numpy()
        try:
            predicted = adapter(sr)
        except Exception:
            log.warning("OCR adapter failed on %s; counted as unrecognised", rec.path)
            predicted = ""
        pairs.append((rec.plate_text, predicted))
    return evaluate_plates(pairs, adapter_name=getattr(adapter, "name", type(adapter).__name__))
