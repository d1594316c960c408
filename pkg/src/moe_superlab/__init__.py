"""Toy dense and mixture-of-experts autoencoders for studying superposition."""

from moe_superlab.datagen import (
    FeatureDistribution,
    importance_exponential,
    importance_shuffled,
    sample_batch,
)
from moe_superlab.estimator import ToyMoEAutoencoder
from moe_superlab.metrics import (
    FeatureClass,
    classify_feature,
    conditional_usage,
    expert_usage,
    feature_stats,
    features_per_dimension,
    occupies,
    total_capacity,
    wtw_matrix,
)
from moe_superlab.models import (
    ArchSpec,
    DenseModel,
    MoEModel,
    RouterInit,
    forward_dense,
    forward_moe,
    init_model,
    route,
)
from moe_superlab.training import TrainConfig, TrainResult, train, train_best_of

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "DenseModel",
    "FeatureClass",
    "FeatureDistribution",
    "MoEModel",
    "RouterInit",
    "ToyMoEAutoencoder",
    "TrainConfig",
    "TrainResult",
    "classify_feature",
    "conditional_usage",
    "expert_usage",
    "feature_stats",
    "features_per_dimension",
    "forward_dense",
    "forward_moe",
    "importance_exponential",
    "importance_shuffled",
    "init_model",
    "occupies",
    "route",
    "sample_batch",
    "total_capacity",
    "train",
    "train_best_of",
    "wtw_matrix",
]
