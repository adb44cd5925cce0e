"""Training-dynamics analysis and figure emitters.

Every plot is paired with a machine-readable data table (full-precision
CSV) so downstream checks assert on numbers, not pixels. Covers PSNR-vs-
iteration curves, the complexity/quality scatter, relative-contrast curves
between runs, t-SNE embedding exports, and the embedding-dimension /
distance ablation driver.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import PatchPair
from .losses import PECLConfig, build_loss
from .metrics import contrast_metric
from .model import SRModel, SRModelConfig
from .training import TrainConfig, Trainer, load_checkpoint, loss_from_checkpoint, model_from_checkpoint

log = logging.getLogger(__name__)

TSNE_PERPLEXITY = 30.0
TSNE_SEED = 0


@dataclass
class CurveSeries:
    """A named series of (iteration, value) points, iterations increasing."""

    name: str
    points: list[tuple[int, float]]

    def __post_init__(self):
        iters = [it for it, _ in self.points]
        if any(b <= a for a, b in zip(iters, iters[1:])):
            raise ValueError(f"iterations must be strictly increasing in series {self.name!r}")

    @property
    def iterations(self) -> list[int]:
        return [it for it, _ in self.points]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]


def read_curves(run_dir: str | Path) -> dict[str, CurveSeries]:
    """Load every numeric column of a run's curves.csv as a CurveSeries."""
    path = Path(run_dir) / "curves.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no curves.csv in {run_dir}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"curves.csv in {run_dir} is empty")
    series: dict[str, CurveSeries] = {}
    for column in rows[0]:
        if column == "iter":
            continue
        points = [
            (int(row["iter"]), float(row[column]))
            for row in rows
            if row.get(column) not in (None, "")
        ]
        if points:
            series[column] = CurveSeries(name=column, points=points)
    return series


def contrast_curve(series: CurveSeries, baseline: CurveSeries, name: str | None = None) -> CurveSeries:
    """Pointwise relative PSNR contrast against a baseline series.

    Iterations are inner-joined; a series contrasted with itself is
    identically zero.
    """
    base = dict(baseline.points)
    points = [
        (it, contrast_metric(value, base[it])) for it, value in series.points if it in base
    ]
    if not points:
        raise ValueError("series share no iterations")
    return CurveSeries(name=name or f"{series.name}_vs_{baseline.name}", points=points)


def write_table(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    """Write a CSV with repr-precision floats so values round-trip exactly."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def plot_psnr_vs_iterations(
    runs: dict[str, CurveSeries], out_dir: str | Path, stem: str = "psnr_vs_iterations"
) -> tuple[Path, Path]:
    """Log-x PSNR curves for one or more runs; returns (png, csv) paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = []
    for name, series in runs.items():
        ax.plot(series.iterations, series.values, marker="o", markersize=3, label=name)
        rows.extend((name, it, v) for it, v in series.points)
    ax.set_xscale("log")
    ax.set_xlabel("iterations")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    table = write_table(out_dir / f"{stem}.csv", ["run", "iter", "psnr"], rows)
    return png, table


def plot_complexity_scatter(
    entries: Sequence[tuple[str, float, float]],
    out_dir: str | Path,
    stem: str = "gflops_vs_psnr",
) -> tuple[Path, Path]:
    """Scatter of (gflops, psnr) with marker radius proportional to sqrt(gflops).

    ``entries`` rows are (name, gflops, psnr). Matplotlib marker size is an
    area, so s proportional to gflops gives the required radius law.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = []
    for name, gflops, value in entries:
        area = 40.0 * gflops
        ax.scatter([gflops], [value], s=area, alpha=0.6)
        ax.annotate(name, (gflops, value), fontsize=8, xytext=(4, 4), textcoords="offset points")
        rows.append((name, float(gflops), float(value), float(np.sqrt(gflops))))
    ax.set_xlabel("GFLOPs")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    table = write_table(
        out_dir / f"{stem}.csv", ["name", "gflops", "psnr", "marker_radius"], rows
    )
    return png, table


def plot_contrast_curves(
    curves: dict[str, CurveSeries], out_dir: str | Path, stem: str = "contrast_curves"
) -> tuple[Path, Path]:
    """Relative-contrast curves on a log-x axis, plus their data table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    rows = []
    for name, series in curves.items():
        ax.plot(series.iterations, series.values, marker="o", markersize=3, label=name)
        rows.extend((name, it, v) for it, v in series.points)
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("iterations")
    ax.set_ylabel("relative PSNR contrast")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    table = write_table(out_dir / f"{stem}.csv", ["series", "iter", "contrast"], rows)
    return png, table


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------


def export_embeddings(
    checkpoint_path: str | Path | None,
    pairs: Sequence[PatchPair],
    out_dir: str | Path,
    perplexity: float = TSNE_PERPLEXITY,
    seed: int = TSNE_SEED,
    model=None,
    loss=None,
) -> tuple[Path, Path]:
    """Dump HR/SR embeddings plus their 2-D t-SNE projection.

    Writes embeddings.csv (id, role, d-vector: 2 rows per pair) and
    tsne.csv (id, role, x, y). The checkpoint must contain the Siamese
    encoder (or pass ``model``/``loss`` directly); the projection is
    seeded and PCA-initialised, so reruns are identical. Perplexity is
    clamped below the sample count when the export is small.
    """
    if model is None or loss is None:
        payload = load_checkpoint(checkpoint_path)
        if payload.get("loss_name") != "pecl" or not payload.get("loss_state"):
            raise ValueError("checkpoint does not contain Siamese encoder parameters")
        model = model_from_checkpoint(payload).eval()
        loss = loss_from_checkpoint(payload).eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    vectors = []
    from .losses import embed_pair

    with torch.no_grad():
        for i, pair in enumerate(pairs):
            lr_t = torch.from_numpy(np.asarray(pair.lr)).float().unsqueeze(0)
            hr_t = torch.from_numpy(np.asarray(pair.hr)).float().unsqueeze(0)
            sr_t = model.super_resolve(lr_t)
            emb_sr, emb_hr = embed_pair(
                sr_t, hr_t, loss.encoder, loss.config.encoder_input_size
            )
            for role, emb in (("HR", emb_hr), ("SR", emb_sr)):
                vec = emb[0].double().numpy()
                rows.append((f"pair_{i:05d}", role, *vec.tolist()))
                vectors.append(vec)

    dim = len(vectors[0])
    emb_table = write_table(
        out_dir / "embeddings.csv",
        ["id", "role", *[f"v{j}" for j in range(dim)]],
        rows,
    )

    from sklearn.manifold import TSNE

    n = len(vectors)
    eff_perplexity = min(perplexity, max(1.0, (n - 1) / 3.0))
    if eff_perplexity != perplexity:
        log.warning("perplexity clamped to %.1f for %d samples", eff_perplexity, n)
    coords = TSNE(
        n_components=2, perplexity=eff_perplexity, random_state=seed, init="pca"
    ).fit_transform(np.stack(vectors))
    tsne_table = write_table(
        out_dir / "tsne.csv",
        ["id", "role", "x", "y"],
        [(rows[i][0], rows[i][1], float(coords[i, 0]), float(coords[i, 1])) for i in range(n)],
    )
    return emb_table, tsne_table


# ---------------------------------------------------------------------------
# Ablation driver
# ---------------------------------------------------------------------------


def run_ablation(
    train_pairs: Sequence[PatchPair],
    val_pairs: Sequence[PatchPair],
    model_config: SRModelConfig,
    train_config: TrainConfig,
    pecl_config: PECLConfig,
    out_dir: str | Path,
    dims: Sequence[int] = (64, 128, 256, 512),
    distances: Sequence[str] = ("manhattan", "euclidean"),
    baseline_losses: Sequence[str] = ("mse", "mae"),
) -> dict:
    """Sweep embedding dimension x distance against pixel-only baselines.

    Trains one run per configuration from an identical seed, then emits an
    ablation report shaped like the evaluation tables (rows keyed by
    distance and dimension with median/std fidelity metrics) plus relative
    contrast curves of every sweep run against each baseline.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def _train(name: str, loss_name: str, pecl_cfg: PECLConfig | None):
        run_dir = out_dir / name
        torch.manual_seed(train_config.seed)
        model = SRModel(replace(model_config))
        cfg = replace(train_config, loss=loss_name)
        loss = build_loss(loss_name, pecl_cfg)
        trainer = Trainer(cfg, model, loss, run_dir, pecl_config=pecl_cfg)
        trainer.fit(train_pairs, val_pairs)
        report = read_curves(run_dir)
        return run_dir, report["val_psnr"]

    curves: dict[str, CurveSeries] = {}
    report_rows = []
    for loss_name in baseline_losses:
        _, series = _train(loss_name, loss_name, None)
        curves[loss_name] = series
    for distance in distances:
        for dim in dims:
            name = f"pecl_{distance}_d{dim}"
            pecl_cfg = replace(pecl_config, distance=distance, embed_dim=dim)
            run_dir, series = _train(name, "pecl", pecl_cfg)
            curves[name] = series
            from .training import validate

            payload = load_checkpoint(run_dir / "best.pt")
            best_model = model_from_checkpoint(payload).eval()
            agg = validate(best_model, val_pairs).aggregate
            report_rows.append(
                {
                    "distance": distance,
                    "embed_dim": dim,
                    **{
                        key: {"median": agg[key]["median"], "std": agg[key]["std"]}
                        for key in ("psnr", "psnr_y", "ssim", "ssim_y")
                    },
                    "lpips": None,
                }
            )

    contrast: dict[str, CurveSeries] = {}
    for base_name in baseline_losses:
        for name, series in curves.items():
            if name in baseline_losses:
                continue
            key = f"{name}_vs_{base_name}"
            contrast[key] = contrast_curve(series, curves[base_name], name=key)
    plot_contrast_curves(contrast, out_dir)

    report = {
        "rows": report_rows,
        "baselines": list(baseline_losses),
        "dims": list(dims),
        "distances": list(distances),
        "contrast_series": {k: v.points for k, v in contrast.items()},
    }
    with open(out_dir / "ablation_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report
