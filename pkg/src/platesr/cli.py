"""Command-line surface.

Subcommands: train, eval, infer, plots, export-embeddings, count-flops.
Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, metrics
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    DegradationSpec,
    ManifestError,
    extract_patches,
    load_image,
    load_manifest,
    save_image,
)
from .inference import tiled_super_resolve
from .losses import build_loss
from .model import SRModelConfig, count_macs, count_params_flops
from .recognition import run_ocr_eval
from .resample import upscale
from .training import Trainer, load_checkpoint, model_from_checkpoint, validate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse usage failures onto exit code 1
        raise UsageError(message)


def _load_callable(spec: str):
    """Resolve 'package.module:attr' into the attribute."""
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise UsageError(f"adapter spec must look like 'module:attr', got {spec!r}")
    module = importlib.import_module(module_name)
    obj = getattr(module, attr)
    return obj() if isinstance(obj, type) else obj


def _records_for_split(manifest_path: str, split: str):
    records = [r for r in load_manifest(manifest_path) if r.split == split]
    if not records:
        raise UsageError(f"manifest {manifest_path} has no records with split={split!r}")
    return records


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    run_dir = Path(args.out_dir or cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")

    if not cfg.data.train_manifest or not cfg.data.val_manifest:
        raise UsageError("config must set data.train_manifest and data.val_manifest")
    train_records = _records_for_split(cfg.data.train_manifest, "train")
    val_records = _records_for_split(cfg.data.val_manifest, "val")

    patch = cfg.data.hr_patch_size
    train_pairs = extract_patches(
        train_records, cfg.degradation, patch, stride=cfg.data.train_stride
    )
    val_pairs = extract_patches(
        val_records, cfg.degradation, patch, stride=cfg.data.val_stride or patch
    )
    log.info("extracted %d train / %d val patch pairs", len(train_pairs), len(val_pairs))

    torch.manual_seed(cfg.train.seed)
    from .model import SRModel

    model = SRModel(cfg.model)
    pecl_cfg = cfg.pecl if cfg.train.loss == "pecl" else None
    loss = build_loss(cfg.train.loss, pecl_cfg)
    trainer = Trainer(cfg.train, model, loss, run_dir, pecl_config=pecl_cfg)
    state = trainer.fit(train_pairs, val_pairs, resume_from=args.resume)
    print(f"run dir: {run_dir}")
    print(f"best val PSNR {state.best_val_psnr:.3f} dB at iteration {state.best_iter}")
    return EXIT_OK


class _BicubicBaseline:
    """Stand-in 'model' that upscales with the bicubic kernel."""

    def super_resolve(self, lr_t: torch.Tensor) -> torch.Tensor:
        out = [upscale(img.double().numpy(), self.scale) for img in lr_t]
        return torch.from_numpy(np.clip(np.stack(out), 0.0, 1.0)).float()

    def __init__(self, scale: int):
        self.scale = scale


def cmd_eval(args) -> int:
    if args.baseline and args.checkpoint:
        raise UsageError("pass either --checkpoint or --baseline, not both")
    if args.baseline:
        if args.baseline != "bicubic":
            raise UsageError(f"unknown baseline {args.baseline!r}")
        model = _BicubicBaseline(args.scale)
        spec = DegradationSpec(scale=args.scale)
        label = "bicubic_baseline"
    elif args.checkpoint:
        payload = load_checkpoint(args.checkpoint)
        model = model_from_checkpoint(payload).eval()
        spec = DegradationSpec(scale=payload["model_config"]["scale"])
        label = "model"
    else:
        raise UsageError("one of --checkpoint or --baseline is required")

    records = _records_for_split(args.manifest, args.split)
    pairs = extract_patches(records, spec, args.patch_size, stride=args.patch_size)
    lpips_adapter = _load_callable(args.lpips_adapter) if args.lpips_adapter else None

    fid_records = []
    for i, pair in enumerate(pairs):
        lr_t = torch.from_numpy(np.asarray(pair.lr)).float().unsqueeze(0)
        sr = model.super_resolve(lr_t)[0].double().numpy()
        fid_records.append(metrics.fidelity_record(f"{label}_{i:05d}", sr, pair.hr, lpips_adapter))
    unavailable = {} if lpips_adapter else {"lpips": "adapter unavailable"}
    report = metrics.MetricsReport.from_per_image(fid_records, unavailable=unavailable)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / f"fidelity_{label}.json")
    for key in ("psnr", "psnr_y", "ssim", "ssim_y", "lpips"):
        if key in report.aggregate:
            digits = 2 if key.startswith("psnr") else 4
            print(f"{label} {key}: {metrics.format_median_std(report.aggregate[key], digits)}")
        else:
            print(f"{label} {key}: unavailable ({report.unavailable.get(key, 'missing')})")

    if args.ocr_adapter:
        adapter = _load_callable(args.ocr_adapter)
        rec_report = run_ocr_eval(model, records, adapter, spec)
        rec_report.save(out_dir / f"recognition_{label}.json")
        print(
            f"{label} EMA {rec_report.ema:.2%}  L-sim {rec_report.l_sim:.2%}  "
            f"CER {rec_report.cer:.2%}  WER {rec_report.wer:.2%}  F1 {rec_report.f1:.2%}"
        )
    else:
        print(f"{label} recognition: skipped (no OCR adapter)")
    return EXIT_OK


def cmd_infer(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload).eval()
    scale = payload["model_config"]["scale"]
    lr_img = load_image(args.input)
    sr = tiled_super_resolve(model, lr_img, scale, tile=args.tile, overlap=args.overlap)
    save_image(sr, args.output)
    print(f"{args.input} {lr_img.shape[1]}x{lr_img.shape[2]} -> "
          f"{args.output} {sr.shape[1]}x{sr.shape[2]} (x{scale})")
    return EXIT_OK


def cmd_plots(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = {}
    for run_dir in args.runs:
        name = Path(run_dir).name
        series = analysis.read_curves(run_dir)
        if "val_psnr" not in series:
            print(f"notice: {run_dir} has no val_psnr series; skipped", file=sys.stderr)
            continue
        runs[name] = series["val_psnr"]
    emitted = []
    if runs:
        emitted += analysis.plot_psnr_vs_iterations(runs, out_dir)
    if args.baseline_run:
        base_name = Path(args.baseline_run).name
        base = analysis.read_curves(args.baseline_run).get("val_psnr")
        if base is None:
            raise UsageError(f"baseline run {args.baseline_run} has no val_psnr series")
        curves = {
            f"{name}_vs_{base_name}": analysis.contrast_curve(series, base)
            for name, series in runs.items()
            if name != base_name
        }
        if curves:
            emitted += analysis.plot_contrast_curves(curves, out_dir)
    if args.scatter_table:
        entries = [
            (row["name"], float(row["gflops"]), float(row["psnr"]))
            for row in analysis.read_table(args.scatter_table)
        ]
        emitted += analysis.plot_complexity_scatter(entries, out_dir)
    if not emitted:
        print("notice: nothing to plot", file=sys.stderr)
    for path in emitted:
        print(path)
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    records = _records_for_split(args.manifest, args.split)
    payload = load_checkpoint(args.checkpoint)
    spec = DegradationSpec(scale=payload["model_config"]["scale"])
    pairs = extract_patches(records, spec, args.patch_size, stride=args.patch_size)
    if args.limit:
        pairs = pairs[: args.limit]
    emb_table, tsne_table = analysis.export_embeddings(
        args.checkpoint, pairs, args.out, seed=args.seed
    )
    print(emb_table)
    print(tsne_table)
    return EXIT_OK


def cmd_count_flops(args) -> int:
    if args.config:
        cfg = load_run_config(args.config).model
    else:
        cfg = SRModelConfig(
            base_channels=args.base_channels,
            num_rdb=args.num_rdb,
            rdb_convs=args.rdb_convs,
            growth=args.growth,
            ca_reduction=args.ca_reduction,
            scale=args.scale,
        )
    params, flops = count_params_flops(cfg, (args.input_size, args.input_size))
    macs = count_macs(cfg, (args.input_size, args.input_size))
    print(f"input {args.input_size}x{args.input_size}  scale x{cfg.scale}")
    print(f"parameters: {params:,} ({params / 1e6:.3f} M)")
    print(f"flops (2*MAC + bias): {flops:,.0f} ({flops / 1e9:.3f} G)")
    print(f"MACs (tool-style 'FLOPs'): {macs:,} ({macs / 1e9:.3f} G)")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="platesr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None, help="override config out_dir")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="fidelity (and optional OCR) evaluation")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", default=None, choices=["bicubic"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--out", default="eval_out")
    p.add_argument("--ocr-adapter", default=None, help="module:attr OCR adapter")
    p.add_argument("--lpips-adapter", default=None, help="module:attr LPIPS adapter")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one image with tiling")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tile", type=int, default=48)
    p.add_argument("--overlap", type=int, default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plots", help="emit analysis figures + data tables")
    p.add_argument("runs", nargs="*", help="run directories with curves.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-run", default=None, help="run dir for contrast curves")
    p.add_argument("--scatter-table", default=None, help="CSV with name,gflops,psnr rows")
    p.set_defaults(func=cmd_plots)

    p = sub.add_parser("export-embeddings", help="dump Siamese embeddings + t-SNE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--seed", type=int, default=analysis.TSNE_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("count-flops", help="closed-form parameter/FLOP accounting")
    p.add_argument("--config", default=None, help="run config (uses its model section)")
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--num-rdb", type=int, default=8)
    p.add_argument("--rdb-convs", type=int, default=4)
    p.add_argument("--growth", type=int, default=44)
    p.add_argument("--ca-reduction", type=int, default=16)
    p.add_argument("--scale", type=int, default=8)
    p.set_defaults(func=cmd_count_flops)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
