"""Fusion networks, the legacy forest, metrics and model serialization."""

from .fusion import FusionModel, TrainConfig, Variant, build_early_fusion, default_model, train
from .metrics import EvalReport, cross_validate, evaluate_scores, roc_auc
from .nn import Adam, Mlp, MlpSpec, bce_loss

__all__ = [
    "Adam", "EvalReport", "FusionModel", "Mlp", "MlpSpec", "TrainConfig", "Variant",
    "bce_loss", "build_early_fusion", "cross_validate", "default_model",
    "evaluate_scores", "roc_auc", "train",
]
