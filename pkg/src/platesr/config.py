"""Run configuration: one validated document driving a whole experiment.

The document combines the model, training, loss and degradation settings
with dataset manifests and an output directory. Parsing is strict —
unknown keys anywhere are rejected before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DegradationSpec
from .losses import PECLConfig
from .model import SRModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a run config."""


@dataclass
class DataConfig:
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    hr_patch_size: int = 64
    train_stride: int | None = None      # default: hr_patch_size // 2 (overlapping)
    val_stride: int | None = None        # default: hr_patch_size (non-overlapping)

    def __post_init__(self):
        if self.hr_patch_size < 1:
            raise ConfigError("hr_patch_size must be >= 1")


@dataclass
class RunConfig:
    model: SRModelConfig = field(default_factory=SRModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pecl: PECLConfig = field(default_factory=PECLConfig)
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/run"

    def __post_init__(self):
        if self.model.scale != self.train.scale or self.model.scale != self.degradation.scale:
            raise ConfigError(
                f"scale mismatch: model {self.model.scale}, train {self.train.scale}, "
                f"degradation {self.degradation.scale}"
            )
        if self.data.hr_patch_size % self.model.scale:
            raise ConfigError(
                f"hr_patch_size {self.data.hr_patch_size} not divisible by scale {self.model.scale}"
            )

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "pecl": dataclasses.asdict(self.pecl),
            "degradation": dataclasses.asdict(self.degradation),
            "data": dataclasses.asdict(self.data),
            "out_dir": self.out_dir,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


_SECTIONS = {
    "model": SRModelConfig,
    "train": TrainConfig,
    "pecl": PECLConfig,
    "degradation": DegradationSpec,
    "data": DataConfig,
}


def _build_section(name: str, cls, payload: dict):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {name!r} must be an object")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"section {name!r}: unknown keys {sorted(unknown)}")
    converted = {
        k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()
    }
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - (set(_SECTIONS) | {"out_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {
        name: _build_section(name, cls, doc[name])
        for name, cls in _SECTIONS.items()
        if name in doc
    }
    if "out_dir" in doc:
        kwargs["out_dir"] = doc["out_dir"]
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc.msg})") from exc
    return run_config_from_dict(doc)
