"""GAN-based anomaly detection for images and patch-scored volumes.

Public surface: the three sklearn-style detectors, the loss and metric
primitives, the patch scoring pipeline, and the phantom generator.
"""

from .errors import (
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    SamplingError,
    StageError,
)
from .estimators import (
    GanomalyDetector,
    OneClassSvmDetector,
    ProgressiveGanomalyDetector,
    SvmModel,
    svm_decision,
    svm_fit,
)
from .losses import (
    GradientPenaltyConfig,
    LossWeights,
    adversarial_loss,
    contextual_loss,
    discriminator_bce,
    encoder_loss,
    generator_total,
    gradient_penalty,
    wasserstein_critic_loss,
)
from .metrics import ConfusionCounts, RocCurve, classify_at_threshold, roc_auc, ssim, summary_metrics
from .networks import GanomalyNets, ProgressiveStack, blend_forward, grow
from .phantom import DiskSpec, Phantom, insert_disk, intensity_sweep, make_base_volume, size_sweep
from .scoring import (
    ScoreMap,
    ScoreNormalizer,
    anomaly_score,
    anomaly_scores,
    decompose,
    fit_normalizer,
    modified_score,
    modified_scores,
    reassemble,
    score_volume,
)
from .training import TrainConfig, TrainState, downsample_for_stage, fit_fixed, fit_progressive

__version__ = "0.1.0"

__all__ = [
    "GanomalyDetector", "ProgressiveGanomalyDetector", "OneClassSvmDetector",
    "SvmModel", "svm_fit", "svm_decision",
    "LossWeights", "GradientPenaltyConfig", "encoder_loss", "contextual_loss",
    "adversarial_loss", "generator_total", "discriminator_bce",
    "wasserstein_critic_loss", "gradient_penalty",
    "ConfusionCounts", "RocCurve", "classify_at_threshold", "summary_metrics",
    "roc_auc", "ssim",
    "GanomalyNets", "ProgressiveStack", "blend_forward", "grow",
    "DiskSpec", "Phantom", "make_base_volume", "insert_disk",
    "intensity_sweep", "size_sweep",
    "ScoreMap", "ScoreNormalizer", "anomaly_score", "anomaly_scores",
    "fit_normalizer", "modified_score", "modified_scores",
    "decompose", "reassemble", "score_volume",
    "TrainConfig", "TrainState", "fit_fixed", "fit_progressive",
    "downsample_for_stage",
    "DimensionError", "StageError", "DivergenceError", "SamplingError",
    "DegenerateInputError",
]
