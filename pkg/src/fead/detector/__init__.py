"""Anomaly detection: vertex features, the graph-attention classifier
trained on benign graphs, and locality-aware post-processing."""

from .features import (
    EdgeRarityScorer,
    FeatureTransform,
    ZeroScorer,
    build_feature_matrix,
    embed_vertex,
    make_scorer,
)
from .gat import (
    GatModel,
    TrainConfig,
    build_attention_edges,
    gat_forward,
    gradients,
    model_from_json,
    model_to_json,
    predict_type,
    train_benign,
)
from .postprocess import benign_density, is_anomalous, postprocess

__all__ = [
    "EdgeRarityScorer", "FeatureTransform", "ZeroScorer",
    "build_feature_matrix", "embed_vertex", "make_scorer",
    "GatModel", "TrainConfig", "build_attention_edges", "gat_forward",
    "gradients", "model_from_json", "model_to_json", "predict_type",
    "train_benign",
    "benign_density", "is_anomalous", "postprocess",
]
