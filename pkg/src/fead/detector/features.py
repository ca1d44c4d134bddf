"""Vertex feature vectors: typed in/out degree counts plus an anomaly prior.

The raw layout is [in-counts ‖ out-counts ‖ S(v)] with one slot per
registered edge type and direction. Counts are unbounded, so before they
reach the attention layers they pass through log1p and a per-dimension
standardization fitted on the training graph; the S(v) slot is already in
[0, 1] and is left untouched.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..provgraph import ProvenanceGraph


class ZeroScorer:
    """S(v) = 0 for every vertex (ablation baseline)."""

    kind = "zero"

    def fit(self, graph: ProvenanceGraph) -> "ZeroScorer":
        return self

    def score(self, graph: ProvenanceGraph, vertex_id: str) -> float:
        graph.entity(vertex_id)
        return 0.0


class EdgeRarityScorer:
    """S(v) = 1 - count(t*)/|E| where t* is the globally rarest edge type
    incident to v. Vertices touching only common event types score near 0;
    a vertex involved in a one-off event type scores near 1. Isolated
    vertices score 0 (no incident evidence at all).
    """

    kind = "edge_rarity"

    def __init__(self):
        self._counts = None
        self._total = 0

    def fit(self, graph: ProvenanceGraph) -> "EdgeRarityScorer":
        self._counts = graph.edge_type_counts()
        self._total = int(self._counts.sum())
        return self

    def score(self, graph: ProvenanceGraph, vertex_id: str) -> float:
        if self._counts is None:
            raise ConfigError("EdgeRarityScorer.score called before fit")
        incident = graph.degree_by_type(vertex_id, "in") + graph.degree_by_type(
            vertex_id, "out"
        )
        types = np.nonzero(incident)[0]
        if types.size == 0 or self._total == 0:
            return 0.0
        rarest = int(self._counts[types].min())
        return float(min(1.0, max(0.0, 1.0 - rarest / self._total)))


def make_scorer(kind: str):
    if kind == "zero":
        return ZeroScorer()
    if kind == "edge_rarity":
        return EdgeRarityScorer()
    raise ConfigError(f"unknown scorer kind {kind!r}")


def embed_vertex(graph: ProvenanceGraph, vertex_id: str, scorer) -> np.ndarray:
    """Raw feature vector [f_in ‖ f_out ‖ S(v)], length 2·|registry| + 1."""
    fin = graph.degree_by_type(vertex_id, "in").astype(np.float64)
    fout = graph.degree_by_type(vertex_id, "out").astype(np.float64)
    s = scorer.score(graph, vertex_id)
    return np.concatenate([fin, fout, [s]])


def build_feature_matrix(graph: ProvenanceGraph, scorer):
    """Raw features for every vertex, rows in graph insertion order."""
    ids = list(graph.vertices)
    n = len(ids)
    dim = 2 * len(graph.registry) + 1
    X = np.zeros((n, dim), dtype=np.float64)
    for i, vid in enumerate(ids):
        X[i] = embed_vertex(graph, vid, scorer)
    return ids, X


class FeatureTransform:
    """log1p + per-dimension standardization of the count dimensions.

    Statistics come from the training graph only; a floor on the standard
    deviation keeps constant dimensions from exploding.
    """

    STD_FLOOR = 1e-6

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, raw: np.ndarray) -> "FeatureTransform":
        counts = np.log1p(raw[:, :-1])
        mean = counts.mean(axis=0)
        std = np.maximum(counts.std(axis=0), cls.STD_FLOOR)
        return cls(mean, std)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        if raw.shape[1] != self.mean.shape[0] + 1:
            raise ConfigError(
                f"feature dimension {raw.shape[1]} does not match transform "
                f"({self.mean.shape[0] + 1}); registry size changed?"
            )
        out = np.empty_like(raw)
        out[:, :-1] = (np.log1p(raw[:, :-1]) - self.mean) / self.std
        out[:, -1] = raw[:, -1]
        return out

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, doc) -> "FeatureTransform":
        return cls(np.array(doc["mean"]), np.array(doc["std"]))
