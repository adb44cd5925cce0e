"""Pixel + embedding consistency training loss.

Combines pixel-space MSE with a contrastive penalty on Siamese embeddings
of the (SR, HR) pair. Embeddings come from one weight-shared residual
encoder evaluated twice, are L2-normalised onto the unit hypersphere, and
are compared with a Manhattan (default) or Euclidean distance. The two
terms are mixed by a learnable scalar weight that is clipped to [0, 1]
after every optimiser step, with the complementary weight derived so the
pair always sums to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

log = logging.getLogger(__name__)

NORM_EPS = 1e-12

DISTANCES = ("manhattan", "euclidean")
# "margin_hinge" is the published formulation max(margin - D, 0)^2, which is
# minimised once embeddings are margin-far apart; "similar_pair" is the
# conventional positive-pair pull D^2. Both are exposed for experiments.
CONTRASTIVE_MODES = ("margin_hinge", "similar_pair")
EMBED_DIMS = (64, 128, 256, 512)


@dataclass
class PECLConfig:
    """Configuration of the pixel + embedding consistency loss."""

    margin: float = 2.0
    distance: str = "manhattan"
    embed_dim: int = 128
    w_pixel_init: float = 0.5
    contrastive_mode: str = "margin_hinge"
    freeze_siamese: bool = False
    # encoder geometry; the default is the 18-layer residual classifier
    encoder_widths: tuple = (64, 128, 256, 512)
    encoder_blocks: tuple = (2, 2, 2, 2)
    encoder_input_size: int | None = None
    pretrained_backbone: bool = False

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.contrastive_mode not in CONTRASTIVE_MODES:
            raise ValueError(
                f"contrastive_mode must be one of {CONTRASTIVE_MODES}, got {self.contrastive_mode!r}"
            )
        if self.embed_dim not in EMBED_DIMS:
            raise ValueError(f"embed_dim must be one of {EMBED_DIMS}, got {self.embed_dim}")
        if not 0.0 <= self.w_pixel_init <= 1.0:
            raise ValueError("w_pixel_init must lie in [0, 1]")
        self.encoder_widths = tuple(self.encoder_widths)
        self.encoder_blocks = tuple(self.encoder_blocks)
        if len(self.encoder_widths) != len(self.encoder_blocks):
            raise ValueError("encoder_widths and encoder_blocks must have equal length")


def pixel_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements; zero iff the tensors coincide."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return torch.mean((sr - hr) ** 2)


def mae_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return torch.mean(torch.abs(sr - hr))


def l2_normalize(v: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Project onto the unit hypersphere; eps guards zero-norm vectors."""
    norm = torch.linalg.vector_norm(v, ord=2, dim=-1, keepdim=True)
    if bool((norm < eps).any()):
        log.warning("degenerate near-zero embedding before normalisation")
    return v / (norm + eps)


def embedding_distance(a: torch.Tensor, b: torch.Tensor, mode: str = "manhattan") -> torch.Tensor:
    """Per-sample distance between embedding batches of shape (..., d)."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if mode == "manhattan":
        return torch.sum(torch.abs(a - b), dim=-1)
    if mode == "euclidean":
        # vector_norm has subgradient 0 at the zero vector
        return torch.linalg.vector_norm(a - b, ord=2, dim=-1)
    raise ValueError(f"unknown distance mode {mode!r}")


def contrastive_loss(
    distance: torch.Tensor, margin: float, mode: str = "margin_hinge"
) -> torch.Tensor:
    """Embedding penalty: max(margin - D, 0)^2, or D^2 in similar_pair mode."""
    if mode == "margin_hinge":
        return F.relu(margin - distance) ** 2
    if mode == "similar_pair":
        return distance**2
    raise ValueError(f"unknown contrastive mode {mode!r}")


class ResidualBlock(nn.Module):
    """Two 3x3 convs with batch norm and an identity / projected skip."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class SiameseEncoder(nn.Module):
    """Residual classification-style encoder projecting to a d-dim embedding.

    The default geometry is the standard 18-layer residual network with its
    classifier head replaced by a projection to ``embed_dim``; module names
    follow the torchvision layout so classification-pretrained weights can
    be transferred directly. Adaptive pooling precedes the projection, so
    any input size is accepted.
    """

    def __init__(
        self,
        embed_dim: int = 128,
        widths: tuple = (64, 128, 256, 512),
        blocks: tuple = (2, 2, 2, 2),
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.conv1 = nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        in_ch = widths[0]
        for i, (width, n_blocks) in enumerate(zip(widths, blocks), start=1):
            stage = []
            for b in range(n_blocks):
                stride = 2 if (i > 1 and b == 0) else 1
                stage.append(ResidualBlock(in_ch, width, stride=stride))
                in_ch = width
            setattr(self, f"layer{i}", nn.Sequential(*stage))
        self.num_stages = len(widths)
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_ch, embed_dim)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = self.maxpool(x)
        for i in range(1, self.num_stages + 1):
            x = getattr(self, f"layer{i}")(x)
        x = self.avgpool(x).flatten(1)
        return self.fc(x)

    def load_classification_weights(self) -> None:
        """Copy publicly distributed classification weights into the backbone.

        Requires the default geometry and network access to fetch the
        weights; the projection head keeps its fresh initialisation.
        """
        from torchvision.models import ResNet18_Weights, resnet18

        reference = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1)
        state = {k: v for k, v in reference.state_dict().items() if not k.startswith("fc.")}
        missing, unexpected = self.load_state_dict(state, strict=False)
        unexpected = [k for k in unexpected if not k.startswith("fc.")]
        if unexpected or any(not k.startswith("fc.") for k in missing):
            raise RuntimeError(
                f"backbone geometry does not match the pretrained weights: "
                f"missing={missing}, unexpected={unexpected}"
            )


def embed_pair(
    sr: torch.Tensor,
    hr: torch.Tensor,
    encoder: SiameseEncoder,
    input_size: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Embed both patches with the shared encoder; returns unit-norm vectors.

    ``input_size`` optionally resizes patches bilinearly to the encoder's
    native resolution before embedding.
    """
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    if input_size is not None and sr.shape[-1] != input_size:
        size = (input_size, input_size)
        sr = F.interpolate(sr, size=size, mode="bilinear", align_corners=False)
        hr = F.interpolate(hr, size=size, mode="bilinear", align_corners=False)
    return l2_normalize(encoder(sr)), l2_normalize(encoder(hr))


class PixelEmbeddingLoss(nn.Module):
    """Weighted sum of pixel MSE and the Siamese contrastive penalty.

    The pixel weight is a learnable parameter; call :meth:`project_weights`
    after each optimiser step to clip it to [0, 1]. The contrastive weight
    is always 1 - w_pixel.
    """

    def __init__(self, config: PECLConfig | None = None, encoder: SiameseEncoder | None = None):
        super().__init__()
        self.config = config or PECLConfig()
        cfg = self.config
        self.encoder = encoder or SiameseEncoder(
            embed_dim=cfg.embed_dim, widths=cfg.encoder_widths, blocks=cfg.encoder_blocks
        )
        if cfg.pretrained_backbone:
            self.encoder.load_classification_weights()
        if cfg.freeze_siamese:
            for p in self.encoder.parameters():
                p.requires_grad_(False)
        self.pixel_weight = nn.Parameter(torch.tensor(float(cfg.w_pixel_init)))

    @property
    def w_pixel(self) -> float:
        return float(self.pixel_weight.detach())

    @property
    def w_contrastive(self) -> float:
        return 1.0 - float(self.pixel_weight.detach())

    def embedding_distances(self, sr, hr) -> torch.Tensor:
        emb_sr, emb_hr = embed_pair(sr, hr, self.encoder, self.config.encoder_input_size)
        return embedding_distance(emb_sr, emb_hr, self.config.distance)

    def forward(self, sr, hr):
        cfg = self.config
        pix = pixel_loss(sr, hr)
        dist = self.embedding_distances(sr, hr)
        contr = contrastive_loss(dist, cfg.margin, cfg.contrastive_mode).mean()
        w_pix = self.pixel_weight
        total = w_pix * pix + (1.0 - w_pix) * contr
        parts = {
            "pixel": float(pix.detach()),
            "contrastive": float(contr.detach()),
            "D_mean": float(dist.detach().mean()),
            "w_pixel": float(w_pix.detach()),
            "w_contrastive": 1.0 - float(w_pix.detach()),
        }
        return total, parts

    @torch.no_grad()
    def project_weights(self) -> tuple[float, float]:
        """Clip w_pixel to [0, 1]; the contrastive weight is its complement."""
        self.pixel_weight.clamp_(0.0, 1.0)
        return self.w_pixel, self.w_contrastive


class PixelOnlyLoss(nn.Module):
    """MSE or MAE baseline with the same (loss, parts) calling convention."""

    def __init__(self, kind: str = "mse"):
        super().__init__()
        if kind not in ("mse", "mae"):
            raise ValueError(f"kind must be 'mse' or 'mae', got {kind!r}")
        self.kind = kind

    def forward(self, sr, hr):
        loss = pixel_loss(sr, hr) if self.kind == "mse" else mae_loss(sr, hr)
        return loss, {}


def build_loss(name: str, pecl_config: PECLConfig | None = None) -> nn.Module:
    """Loss factory keyed by the training config enum {mse, mae, pecl}."""
    if name in ("mse", "mae"):
        return PixelOnlyLoss(name)
    if name == "pecl":
        return PixelEmbeddingLoss(pecl_config)
    raise ValueError(f"unknown loss {name!r}")
