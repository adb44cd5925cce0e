"""Super-resolution generator.

Pipeline: 3x3 shallow conv -> N residual dense blocks (each with a
learnable residual scale) -> channel attention -> log2(scale) transposed-
conv upsampling stages -> final 3x3 reconstruction conv. Outputs are left
unclamped for loss computation; ``super_resolve`` clamps to [0, 1] for
inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class SRModelConfig:
    base_channels: int = 64
    num_rdb: int = 8
    rdb_convs: int = 4
    growth: int = 44
    ca_reduction: int = 16
    scale: int = 8
    alpha_init: float = 0.2
    global_skip: bool = False

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ValueError(f"scale must be 4 or 8, got {self.scale}")
        if 2 ** int(math.log2(self.scale)) != self.scale:
            raise ValueError(f"scale must be a power of two, got {self.scale}")
        if self.base_channels % self.ca_reduction:
            raise ValueError(
                f"ca_reduction {self.ca_reduction} must divide base_channels {self.base_channels}"
            )
        for name in ("base_channels", "num_rdb", "rdb_convs", "growth", "ca_reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def num_upsample_stages(self) -> int:
        return int(math.log2(self.scale))


# Calibrated so the full model lands on the published complexity envelope:
# 1,973,071 parameters and 13.348 G MACs for a 64x64 input.
REFERENCE_CONFIG = SRModelConfig()

TINY_CONFIG = SRModelConfig(
    base_channels=16, num_rdb=2, rdb_convs=3, growth=16, ca_reduction=4, scale=8
)


class ResidualDenseBlock(nn.Module):
    """Densely connected convs fused by a 1x1 conv, gated by a learnable scale.

    out = alpha * fuse(cat(x, f1, ..., fk)) + x, so alpha = 0 reduces the
    block to the identity.
    """

    def __init__(self, channels: int, num_convs: int, growth: int, alpha_init: float):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, padding=1) for i in range(num_convs)
        )
        self.fuse = nn.Conv2d(channels + num_convs * growth, channels, 1)
        self.alpha = nn.Parameter(torch.tensor(float(alpha_init)))

    def forward(self, x):
        feats = x
        for conv in self.convs:
            feats = torch.cat([feats, F.relu(conv(feats))], dim=1)
        return self.alpha * self.fuse(feats) + x


class ChannelAttention(nn.Module):
    """Rescale channels by sigmoid gates computed from pooled descriptors."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} must divide channels {channels}")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        return x * gate[:, :, None, None]


class SRModel(nn.Module):
    """Generator mapping a (B, 3, p, p) LR patch to (B, 3, s*p, s*p)."""

    def __init__(self, config: SRModelConfig | None = None):
        super().__init__()
        self.config = config or replace(REFERENCE_CONFIG)
        cfg = self.config
        self.shallow = nn.Conv2d(3, cfg.base_channels, 3, padding=1)
        self.rdbs = nn.ModuleList(
            ResidualDenseBlock(cfg.base_channels, cfg.rdb_convs, cfg.growth, cfg.alpha_init)
            for _ in range(cfg.num_rdb)
        )
        self.ca = ChannelAttention(cfg.base_channels, cfg.ca_reduction)
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(cfg.base_channels, cfg.base_channels, 4, stride=2, padding=1)
            for _ in range(cfg.num_upsample_stages)
        )
        self.final = nn.Conv2d(cfg.base_channels, 3, 3, padding=1)

    def forward(self, x):
        shallow = self.shallow(x)
        feat = shallow
        for rdb in self.rdbs:
            feat = rdb(feat)
        feat = self.ca(feat)
        if self.config.global_skip:
            feat = feat + shallow
        for stage in self.up:
            feat = F.relu(stage(feat))
        return self.final(feat)

    @torch.no_grad()
    def super_resolve(self, x):
        """Inference forward with outputs clamped to [0, 1]."""
        return self.forward(x).clamp(0.0, 1.0)

    def residual_scales(self) -> list[float]:
        return [float(rdb.alpha) for rdb in self.rdbs]


# ---------------------------------------------------------------------------
# Complexity accounting
# ---------------------------------------------------------------------------


@dataclass
class LayerCost:
    """Parameter and FLOP cost of one layer at a given spatial size."""

    name: str
    params: int
    macs: int
    bias_adds: int = 0

    @property
    def flops(self) -> int:
        # multiply-accumulates counted as two operations, plus bias adds
        return 2 * self.macs + self.bias_adds


def conv_cost(name, in_ch, out_ch, kernel, out_h, out_w) -> LayerCost:
    return LayerCost(
        name,
        params=out_ch * (in_ch * kernel * kernel + 1),
        macs=out_h * out_w * out_ch * in_ch * kernel * kernel,
        bias_adds=out_h * out_w * out_ch,
    )


def conv_transpose_cost(name, in_ch, out_ch, kernel, in_h, in_w, out_h, out_w) -> LayerCost:
    # every input pixel scatters kernel^2 taps per (in, out) channel pair
    return LayerCost(
        name,
        params=out_ch * (in_ch * kernel * kernel + 1),
        macs=in_h * in_w * in_ch * out_ch * kernel * kernel,
        bias_adds=out_h * out_w * out_ch,
    )


def linear_cost(name, in_features, out_features) -> LayerCost:
    return LayerCost(
        name,
        params=out_features * (in_features + 1),
        macs=in_features * out_features,
        bias_adds=out_features,
    )


def model_layer_costs(config: SRModelConfig, input_hw: tuple[int, int]) -> list[LayerCost]:
    """Per-layer costs of the generator for an LR input of the given size."""
    h, w = input_hw
    c = config.base_channels
    layers = [conv_cost("shallow", 3, c, 3, h, w)]
    for b in range(config.num_rdb):
        cin = c
        for i in range(config.rdb_convs):
            layers.append(conv_cost(f"rdbs.{b}.convs.{i}", cin, config.growth, 3, h, w))
            cin += config.growth
        layers.append(conv_cost(f"rdbs.{b}.fuse", cin, c, 1, h, w))
        layers.append(LayerCost(f"rdbs.{b}.alpha", params=1, macs=h * w * c))
    layers.append(linear_cost("ca.fc1", c, c // config.ca_reduction))
    layers.append(linear_cost("ca.fc2", c // config.ca_reduction, c))
    uh, uw = h, w
    for j in range(config.num_upsample_stages):
        layers.append(conv_transpose_cost(f"up.{j}", c, c, 4, uh, uw, 2 * uh, 2 * uw))
        uh, uw = 2 * uh, 2 * uw
    layers.append(conv_cost("final", c, 3, 3, uh, uw))
    return layers


def total_cost(layers: list[LayerCost]) -> tuple[int, int]:
    """Sum (params, flops) over a layer list; empty list costs nothing."""
    return sum(l.params for l in layers), sum(l.flops for l in layers)


def count_params_flops(
    config: SRModelConfig, input_hw: tuple[int, int] = (64, 64)
) -> tuple[int, float]:
    """Exact parameter count and FLOPs (2 x MAC + bias adds) for one forward.

    Note: profiling tools commonly report MACs under the name "FLOPs"; the
    MAC total is ``sum(l.macs for l in model_layer_costs(...))``.
    """
    params, flops = total_cost(model_layer_costs(config, input_hw))
    return params, float(flops)


def count_macs(config: SRModelConfig, input_hw: tuple[int, int] = (64, 64)) -> int:
    """Multiply-accumulate count for one forward (tool-style 'FLOPs')."""
    return sum(l.macs for l in model_layer_costs(config, input_hw))
