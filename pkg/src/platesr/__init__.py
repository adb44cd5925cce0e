"""License-plate super-resolution toolkit.

A residual dense generator with channel attention and transposed-conv
upsampling, trained with a pixel + embedding consistency loss (Siamese
contrastive term with learnable clipped weights), plus the surrounding
machinery: patch pipelines, fidelity and recognition metrics, the training
protocol, and analysis/CLI tooling.
"""

from .data import (
    Batch,
    DegradationSpec,
    ImageRecord,
    PatchPair,
    extract_patch_pair,
    extract_patches,
    load_manifest,
    make_batches,
    split_counts,
)
from .losses import (
    PECLConfig,
    PixelEmbeddingLoss,
    SiameseEncoder,
    build_loss,
    contrastive_loss,
    embed_pair,
    embedding_distance,
    l2_normalize,
    pixel_loss,
)
from .metrics import (
    MetricsReport,
    contrast_metric,
    distortion_maps,
    lpips,
    psnr,
    ssim,
)
from .model import (
    REFERENCE_CONFIG,
    TINY_CONFIG,
    SRModel,
    SRModelConfig,
    count_macs,
    count_params_flops,
)
from .recognition import (
    RecognitionReport,
    evaluate_plates,
    l_similarity,
    levenshtein,
    run_ocr_eval,
)
from .training import (
    TrainConfig,
    Trainer,
    TrainState,
    cosine_lr,
    fit,
    load_checkpoint,
    train_step,
    validate,
)

__version__ = "0.1.0"
