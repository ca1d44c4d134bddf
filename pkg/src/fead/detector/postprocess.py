"""Locality-aware correction of flagged vertices.

Attack activity clusters densely in the graph while false alarms tend to
sit alone inside benign surroundings, so a flagged vertex whose k-hop
neighborhood is mostly unflagged gets corrected back to benign.
"""

from __future__ import annotations

from ..provgraph import ProvenanceGraph


def is_anomalous(predicted: str, actual: str) -> bool:
    """A vertex is anomalous when the predicted entity type differs from
    the actual one."""
    return predicted != actual


def benign_density(graph: ProvenanceGraph, vertex_id: str,
                   flagged: set[str], k: int = 2) -> float:
    """Fraction of the k-hop neighborhood that is not flagged.

    An empty neighborhood yields 0: an isolated anomaly has no benign
    evidence around it, so it stays flagged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    neighborhood = graph.neighbors_k(vertex_id, k)
    if not neighborhood:
        return 0.0
    benign = sum(1 for u in neighborhood if u not in flagged)
    return benign / len(neighborhood)


def postprocess(graph: ProvenanceGraph, flagged: set[str],
                threshold: float = 0.8, k: int = 2) -> set[str]:
    """Unflag vertices whose benign density strictly exceeds the threshold.

    One simultaneous pass: densities are computed against the original
    flagged set, never against intermediate results, so the outcome does
    not depend on iteration order. The result is always a subset of the
    input set.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    keep = set()
    for v in flagged:
        if benign_density(graph, v, flagged, k) <= threshold:
            keep.add(v)
    return keep
