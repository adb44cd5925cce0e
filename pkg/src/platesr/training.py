"""Iteration-based training loop.

Adam with a single non-restarting cosine anneal of the learning rate to
zero over the run, periodic validation on clamped inference outputs, and
best-PSNR checkpointing. Runs are reproducible from (config, seed): batch
order comes from a dedicated generator whose state is checkpointed, so a
resumed run retraces the interrupted one exactly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import PatchPair
from .losses import PECLConfig, build_loss
from .metrics import MetricsReport, fidelity_record
from .model import SRModel, SRModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOSSES = ("mse", "mae", "pecl")


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    total_iters: int = 1_000_000
    batch_size: int = 128
    lr_init: float = 1e-4
    optimizer: str = "adam"
    scheduler: str = "cosine"
    val_every: int = 1000
    seed: int = 0
    loss: str = "pecl"
    scale: int = 8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if self.lr_init <= 0:
            raise ValueError("lr_init must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.scheduler != "cosine":
            raise ValueError(f"unsupported scheduler {self.scheduler!r}")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.scale not in (4, 8):
            raise ValueError(f"scale must be 4 or 8, got {self.scale}")


@dataclass
class TrainState:
    iteration: int = 0
    best_val_psnr: float = -math.inf
    best_iter: int = -1


def cosine_lr(step: int, lr_init: float, total_iters: int) -> float:
    """Single cosine anneal: lr_init at step 0, lr_init/2 at T/2, 0 at T."""
    return lr_init * (1.0 + math.cos(math.pi * step / total_iters)) / 2.0


def make_optimizer(model: torch.nn.Module, loss_module: torch.nn.Module, config: TrainConfig):
    params = list(model.parameters()) + [
        p for p in loss_module.parameters() if p.requires_grad
    ]
    return torch.optim.Adam(params, lr=config.lr_init, betas=(0.9, 0.999), eps=1e-8)


def train_step(model, loss_module, optimizer, batch, state: TrainState, config: TrainConfig):
    """One forward/backward/update; returns a diagnostics record.

    ``batch`` is either a data.Batch or an (lr, hr) tensor pair. The
    learning rate for the step comes from the cosine schedule at the
    current iteration; the loss module's weight projection runs after the
    optimiser update.
    """
    if state.iteration >= config.total_iters:
        raise ValueError("training state already at total_iters")
    if isinstance(batch, tuple):
        lr_t, hr_t = batch
        origins = None
    else:
        lr_t, hr_t = batch.tensors()
        origins = [p.origin for p in batch.pairs]

    lr_value = cosine_lr(state.iteration, config.lr_init, config.total_iters)
    for group in optimizer.param_groups:
        group["lr"] = lr_value

    sr = model(lr_t)
    loss, parts = loss_module(sr, hr_t)
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss at iter {state.iteration} (lr={lr_value:.3e}, "
            f"batch={origins if origins is not None else lr_t.shape})"
        )
    optimizer.zero_grad()
    loss.backward()
    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for g in optimizer.param_groups for p in g["params"]], config.grad_clip
        )
    optimizer.step()
    if hasattr(loss_module, "project_weights"):
        loss_module.project_weights()
        parts["w_pixel"] = loss_module.w_pixel
        parts["w_contrastive"] = loss_module.w_contrastive

    state.iteration += 1
    return {"iter": state.iteration, "lr": lr_value, "loss": float(loss.detach()), **parts}


def _super_resolve(model, lr_t):
    if hasattr(model, "super_resolve"):
        return model.super_resolve(lr_t)
    with torch.no_grad():
        return model(lr_t).clamp(0.0, 1.0)


def validate(model, val_pairs: Sequence[PatchPair]) -> MetricsReport:
    """Fidelity metrics over a validation set using clamped inference."""
    if not val_pairs:
        raise ValueError("validation set is empty")
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    records = []
    for i, pair in enumerate(val_pairs):
        lr_t = torch.from_numpy(np.asarray(pair.lr)).float().unsqueeze(0)
        sr = _super_resolve(model, lr_t)[0].double().numpy()
        records.append(fidelity_record(f"val_{i:05d}", sr, pair.hr))
    if was_training and hasattr(model, "train"):
        model.train()
    return MetricsReport.from_per_image(records, unavailable={"lpips": "adapter unavailable"})


def train_psnr(model, pairs: Sequence[PatchPair]) -> float:
    """Median PSNR of clamped model outputs over a (training) pair list."""
    return validate(model, pairs).aggregate["psnr"]["median"]


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, payload: dict) -> None:
    """Atomic save: a failed write never clobbers the previous checkpoint."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except Exception:
        if tmp.exists():
            tmp.unlink()
        raise


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    return payload


def model_from_checkpoint(payload: dict) -> SRModel:
    model = SRModel(SRModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["model_state"])
    return model


def loss_from_checkpoint(payload: dict):
    pecl_cfg = payload.get("pecl_config")
    loss = build_loss(payload["loss_name"], PECLConfig(**pecl_cfg) if pecl_cfg else None)
    if payload.get("loss_state"):
        loss.load_state_dict(payload["loss_state"])
    return loss


class Trainer:
    """Owns one training run: loop, curves file, checkpoints, resume."""

    CURVE_BASE_COLUMNS = ("iter", "lr", "loss")
    VAL_COLUMNS = ("val_psnr", "val_psnr_y", "val_ssim", "val_ssim_y")
    PECL_COLUMNS = ("pixel", "contrastive", "D_mean", "w_pixel", "w_contrastive")

    def __init__(
        self,
        config: TrainConfig,
        model: SRModel,
        loss_module,
        run_dir: str | Path,
        pecl_config: PECLConfig | None = None,
    ):
        self.config = config
        self.model = model
        self.loss_module = loss_module
        self.pecl_config = pecl_config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.optimizer = make_optimizer(model, loss_module, config)
        self.state = TrainState()
        self._epoch_cache: tuple[int, np.ndarray] | None = None
        self.curve_columns = list(self.CURVE_BASE_COLUMNS)
        if config.loss == "pecl":
            self.curve_columns += list(self.PECL_COLUMNS)
        self.curve_columns += list(self.VAL_COLUMNS)

    @property
    def curves_path(self) -> Path:
        return self.run_dir / "curves.csv"

    def _checkpoint_payload(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "model_config": asdict(self.model.config),
            "model_state": self.model.state_dict(),
            "loss_name": self.config.loss,
            "pecl_config": asdict(self.pecl_config) if self.pecl_config else None,
            "loss_state": self.loss_module.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "iteration": self.state.iteration,
            "best_val_psnr": self.state.best_val_psnr,
            "best_iter": self.state.best_iter,
            "train_config": asdict(self.config),
            "torch_rng_state": torch.get_rng_state(),
        }

    def _restore(self, payload: dict) -> None:
        self.model.load_state_dict(payload["model_state"])
        self.loss_module.load_state_dict(payload["loss_state"])
        self.optimizer.load_state_dict(payload["optimizer_state"])
        self.state = TrainState(
            iteration=payload["iteration"],
            best_val_psnr=payload["best_val_psnr"],
            best_iter=payload["best_iter"],
        )
        torch.set_rng_state(payload["torch_rng_state"])

    def _batch_at(self, pairs: Sequence[PatchPair], iteration: int):
        """Batch for a given global iteration; pure in (seed, iteration).

        Each epoch is a fresh permutation seeded by (seed, epoch), so a
        resumed run reproduces the batch sequence of an uninterrupted one.
        """
        n = len(pairs)
        per_epoch = -(-n // self.config.batch_size)
        epoch, slot = divmod(iteration, per_epoch)
        if self._epoch_cache is None or self._epoch_cache[0] != epoch:
            order = np.random.default_rng([self.config.seed, epoch]).permutation(n)
            self._epoch_cache = (epoch, order)
        order = self._epoch_cache[1]
        idx = order[slot * self.config.batch_size : (slot + 1) * self.config.batch_size]
        lr_t = torch.from_numpy(np.stack([pairs[i].lr for i in idx])).float()
        hr_t = torch.from_numpy(np.stack([pairs[i].hr for i in idx])).float()
        return lr_t, hr_t

    def _append_curve_row(self, row: dict) -> None:
        new_file = not self.curves_path.exists()
        with open(self.curves_path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.curve_columns, extrasaction="ignore")
            if new_file:
                writer.writeheader()
            writer.writerow({k: row.get(k, "") for k in self.curve_columns})

    def fit(
        self,
        train_pairs: Sequence[PatchPair],
        val_pairs: Sequence[PatchPair],
        resume_from: str | Path | None = None,
        stop_after: int | None = None,
    ) -> TrainState:
        """Train to total_iters (or at most ``stop_after`` steps this session).

        ``stop_after`` checkpoints and returns early without altering the
        schedule, so a later resume retraces an uninterrupted run.
        """
        if not train_pairs:
            raise ValueError("training set is empty")
        cfg = self.config
        with open(self.run_dir / "train_config.json", "w", encoding="utf-8") as fh:
            json.dump(asdict(cfg), fh, indent=2)
        if resume_from is not None:
            self._restore(load_checkpoint(resume_from))
            log.info("resumed from %s at iteration %d", resume_from, self.state.iteration)

        session_steps = 0
        self.model.train()
        while self.state.iteration < cfg.total_iters:
            if stop_after is not None and session_steps >= stop_after:
                save_checkpoint(self.run_dir / "last.pt", self._checkpoint_payload())
                log.info("stopping session at iteration %d", self.state.iteration)
                return self.state
            session_steps += 1
            batch = self._batch_at(train_pairs, self.state.iteration)
            diag = train_step(
                self.model, self.loss_module, self.optimizer, batch, self.state, cfg
            )
            if self.state.iteration % cfg.val_every == 0 or self.state.iteration == cfg.total_iters:
                report = validate(self.model, val_pairs)
                agg = report.aggregate
                row = dict(diag)
                row.update(
                    val_psnr=agg["psnr"]["median"],
                    val_psnr_y=agg["psnr_y"]["median"],
                    val_ssim=agg["ssim"]["median"],
                    val_ssim_y=agg["ssim_y"]["median"],
                )
                self._append_curve_row(row)
                if row["val_psnr"] > self.state.best_val_psnr:
                    self.state.best_val_psnr = row["val_psnr"]
                    self.state.best_iter = self.state.iteration
                    save_checkpoint(self.run_dir / "best.pt", self._checkpoint_payload())
                save_checkpoint(self.run_dir / "last.pt", self._checkpoint_payload())
                log.info(
                    "iter %d lr %.3e loss %.5f val_psnr %.3f",
                    self.state.iteration, row["lr"], row["loss"], row["val_psnr"],
                )
        return self.state


def fit(
    config: TrainConfig,
    train_pairs: Sequence[PatchPair],
    val_pairs: Sequence[PatchPair],
    model: SRModel,
    loss_module,
    run_dir: str | Path,
    pecl_config: PECLConfig | None = None,
    resume_from: str | Path | None = None,
    stop_after: int | None = None,
) -> TrainState:
    """Run the full training protocol; see :class:`Trainer`."""
    trainer = Trainer(config, model, loss_module, run_dir, pecl_config=pecl_config)
    return trainer.fit(train_pairs, val_pairs, resume_from=resume_from, stop_after=stop_after)
