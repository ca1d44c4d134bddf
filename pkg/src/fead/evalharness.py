"""Metrics, labeled-data loading, and seeded synthetic attack scenarios.

The generator builds desk-scale graphs that exhibit attack locality: a
kind-consistent benign background, one dense cluster of vertices with
kind-atypical behavior (labeled anomalous), and a sprinkling of isolated
benign vertices that *look* anomalous — false-positive bait that the
locality post-processing should clear. Generation uses `random.Random`
with a fixed draw order, so a seed fully determines the output.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .detector import TrainConfig, postprocess, predict_type, train_benign
from .detector.gat import DEFAULT_CLASSES
from .errors import ConfigError, InputError
from .provgraph import ProvenanceGraph, ingest_lines


class CoverageError(InputError):
    """Flagged vertices missing from the label set."""


@dataclass(frozen=True)
class LabelSet:
    labels: dict  # vertex id -> "benign" | "anomalous"

    def __post_init__(self):
        bad = [v for v in self.labels.values() if v not in ("benign", "anomalous")]
        if bad:
            raise InputError(f"labels must be benign/anomalous, got {sorted(set(bad))}")

    @property
    def anomalous(self) -> set[str]:
        return {k for k, v in self.labels.items() if v == "anomalous"}

    @property
    def benign(self) -> set[str]:
        return {k for k, v in self.labels.items() if v == "benign"}

    @classmethod
    def from_jsonl(cls, text: str) -> "LabelSet":
        labels = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(doc, dict) or "id" not in doc or "label" not in doc:
                raise InputError(f"line {lineno}: label records need 'id' and 'label'")
            if doc["id"] in labels:
                raise InputError(f"line {lineno}: duplicate label for id {doc['id']!r}")
            labels[doc["id"]] = doc["label"]
        return cls(labels)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"id": k, "label": v}, separators=(",", ":")) + "\n"
            for k, v in self.labels.items()
        )


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    fpr: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        """Derived rates; any rate with a zero denominator is defined as 0.

        FPR divides by the benign population (fp + tn).
        """
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        fpr = fp / (fp + tn) if fp + tn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        return cls(tp, fp, tn, fn, precision, recall, fpr, f1)

    def to_json(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "fpr": self.fpr, "f1": self.f1,
        }


def compute_metrics(flagged: set[str], labels: LabelSet) -> Metrics:
    """Vertex-level confusion counts over all labeled vertices."""
    unknown = sorted(v for v in flagged if v not in labels.labels)
    if unknown:
        raise CoverageError("flagged ids missing from labels: " + ", ".join(unknown))
    tp = fp = tn = fn = 0
    for vid, label in labels.labels.items():
        hit = vid in flagged
        if label == "anomalous":
            tp += hit
            fn += not hit
        else:
            fp += hit
            tn += not hit
    return Metrics.from_counts(tp, fp, tn, fn)


def metrics_table(rows: dict[str, Metrics]) -> str:
    """Aligned text table (one row per scenario/run)."""
    header = ("Scenario", "Precision", "Recall", "FPR", "F1-Score")
    body = [
        (name,
         f"{m.precision * 100:.2f}%", f"{m.recall * 100:.2f}%",
         f"{m.fpr * 100:.2f}%", f"{m.f1 * 100:.2f}%")
        for name, m in rows.items()
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


# --- synthetic scenario generation ------------------------------------------

SCENARIOS = ("generic", "log4j_env", "opensmtpd")


@dataclass(frozen=True)
class ScenarioConfig:
    benign_vertex_count: int = 400
    attack_cluster_size: int = 24
    isolated_anomaly_count: int = 8
    edge_density: float = 2.0
    seed: int = 0
    scenario: str = "generic"

    def __post_init__(self):
        if self.benign_vertex_count < 3:
            raise ConfigError("benign_vertex_count must be >= 3")
        if self.attack_cluster_size < 0 or self.isolated_anomaly_count < 0:
            raise ConfigError("cluster and isolated counts must be >= 0")
        if self.attack_cluster_size + self.isolated_anomaly_count >= self.benign_vertex_count:
            raise ConfigError("cluster + isolated anomalies must stay below the benign count")
        if self.edge_density <= 0:
            raise ConfigError("edge_density must be > 0")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.scenario != "generic" and self.attack_cluster_size < 4:
            raise ConfigError("themed scenarios need attack_cluster_size >= 4")


def _entity(vid: str, kind: str, name: str) -> dict:
    return {"id": vid, "kind": kind, "name": name}


class _Builder:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.events: list[dict] = []
        self.entities: dict[str, dict] = {}

    def add_entity(self, vid, kind, name):
        ent = _entity(vid, kind, name)
        self.entities[vid] = ent
        return ent

    def emit(self, etype, src_id, dst_id):
        self.events.append({
            "ts": len(self.events),
            "type": etype,
            "src": self.entities[src_id],
            "dst": self.entities[dst_id],
        })


def _benign_background(b: _Builder, cfg: ScenarioConfig):
    """Kind-consistent background: processes act (spawn, touch files, talk to
    sockets); files and sockets only receive."""
    rng = b.rng
    procs, files, socks = [], [], []
    forced = ["process", "file", "socket"]
    for i in range(cfg.benign_vertex_count):
        if i < 3:
            kind = forced[i]
        else:
            r = rng.random()
            kind = "process" if r < 0.4 else ("file" if r < 0.8 else "socket")
        vid = f"{kind[0]}{i:05d}"
        if kind == "process":
            b.add_entity(vid, kind, f"proc_{i}")
            procs.append(vid)
        elif kind == "file":
            b.add_entity(vid, kind, f"/data/file_{i}")
            files.append(vid)
        else:
            b.add_entity(vid, kind, f"10.0.{i // 256}.{i % 256}:443")
            socks.append(vid)
    fmax = max(2, int(round(2 * cfg.edge_density)))
    for p in procs:
        for _ in range(rng.randint(1, fmax)):
            b.emit(rng.choices(["read", "write", "open"], [5, 3, 2])[0],
                   p, rng.choice(files))
        if rng.random() < 0.6:
            b.emit(rng.choices(["execute", "fork"], [1, 1])[0], p, rng.choice(procs))
        if rng.random() < 0.4:
            b.emit(rng.choices(["connect", "sendto"], [3, 2])[0], p, rng.choice(socks))
    # every file and socket takes part in at least one event, so labeled
    # vertices always materialize in the ingested graph
    for f in files:
        for _ in range(rng.randint(1, fmax)):
            b.emit(rng.choices(["read", "write", "open"], [5, 3, 2])[0],
                   rng.choice(procs), f)
    for s in socks:
        for _ in range(rng.randint(1, max(2, fmax // 2))):
            b.emit(rng.choices(["connect", "sendto", "recvfrom"], [4, 3, 2])[0],
                   rng.choice(procs), s)
    return procs, files, socks


# Intra-cluster edge-type menu keyed by destination kind. Cluster vertices
# are files and sockets dragged through process-style causal chains, so
# every edge is atypical for both endpoints (files/sockets never originate
# anything in benign data, and these in-types are not their usual ones).
_ATYPICAL_BY_DST = {
    "process": ("read", "write", "open"),
    "file": ("execute", "fork", "connect"),
    "socket": ("execute", "fork", "write"),
}


def _attack_cluster(b: _Builder, cfg: ScenarioConfig, procs, files, socks):
    """Densely connected vertices whose edge mixes contradict their kinds."""
    rng = b.rng
    cluster: list[str] = []
    kinds = ["file", "socket"]
    start = 0
    if cfg.scenario == "log4j_env":
        chain = [
            ("process", "java_log4j"), ("process", "bash_rshell"),
            ("file", "env:LD_PRELOAD"), ("socket", "203.0.113.7:4444"),
        ]
        ids = [f"a{i:05d}" for i in range(4)]
        for vid, (kind, name) in zip(ids, chain):
            b.add_entity(vid, kind, name)
            cluster.append(vid)
        b.emit("execute", ids[0], ids[1])
        b.emit("envvar_set", ids[1], ids[2])
        b.emit("envvar_set", ids[0], ids[2])
        b.emit("connect", ids[1], ids[3])
        b.emit("sendto", ids[1], ids[3])
        start = 4
    elif cfg.scenario == "opensmtpd":
        chain = [
            ("process", "smtpd"), ("process", "sh_payload"),
            ("file", "/tmp/payload.sh"), ("socket", "198.51.100.9:80"),
        ]
        ids = [f"a{i:05d}" for i in range(4)]
        for vid, (kind, name) in zip(ids, chain):
            b.add_entity(vid, kind, name)
            cluster.append(vid)
        b.emit("execute", ids[0], ids[1])
        b.emit("connect", ids[1], ids[3])
        b.emit("recvfrom", ids[1], ids[3])
        b.emit("write", ids[1], ids[2])
        b.emit("execute", ids[1], ids[2])
        start = 4
    for i in range(start, cfg.attack_cluster_size):
        kind = kinds[i % 2]
        vid = f"a{i:05d}"
        b.add_entity(vid, kind, f"attack_{i}")
        cluster.append(vid)
    if len(cluster) >= 2:
        for vid in cluster:
            for _ in range(rng.randint(6, 12)):
                other = rng.choice([c for c in cluster if c != vid])
                b.emit(rng.choice(_ATYPICAL_BY_DST[b.entities[other]["kind"]]),
                       vid, other)
        # a couple of bridges into the background keep the cluster reachable
        for _ in range(max(1, len(cluster) // 8)):
            b.emit("read", rng.choice(cluster), rng.choice(files))
    return cluster


def _isolated_bait(b: _Builder, cfg: ScenarioConfig, procs, files, socks):
    """Benign-labeled vertices with anomalous-looking features, each wired to
    several distinct benign vertices so their neighborhoods stay benign."""
    rng = b.rng
    bait: list[str] = []
    for i in range(cfg.isolated_anomaly_count):
        kind = ("file", "socket", "process")[i % 3]
        vid = f"x{i:05d}"
        b.add_entity(vid, kind, f"odd_{i}")
        bait.append(vid)
        if kind == "file":
            for p in rng.sample(procs, min(3, len(procs))):
                b.emit("execute", vid, p)
            b.emit("connect", vid, rng.choice(socks))
        elif kind == "socket":
            for f in rng.sample(files, min(3, len(files))):
                b.emit("write", vid, f)
            b.emit("execute", vid, rng.choice(procs))
        else:
            for p in rng.sample(procs, min(4, len(procs))):
                b.emit("read", p, vid)
    return bait


def scenario_events(cfg: ScenarioConfig):
    """Event stream and labels for a scenario; fully determined by the seed."""
    b = _Builder(cfg.seed)
    procs, files, socks = _benign_background(b, cfg)
    cluster = _attack_cluster(b, cfg, procs, files, socks)
    bait = _isolated_bait(b, cfg, procs, files, socks)
    labels = {vid: "benign" for vid in procs + files + socks}
    labels.update({vid: "anomalous" for vid in cluster})
    labels.update({vid: "benign" for vid in bait})
    # stable id order in the label file
    ordered = {vid: labels[vid] for vid in b.entities}
    return b.events, LabelSet(ordered)


def events_to_jsonl(events: list[dict]) -> str:
    return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in events)


def gen_scenario(cfg: ScenarioConfig):
    """Seeded synthetic provenance graph and its ground-truth labels."""
    events, labels = scenario_events(cfg)
    graph = ingest_lines(events_to_jsonl(events).splitlines())
    return graph, labels


# --- ablation ----------------------------------------------------------------


@dataclass(frozen=True)
class AblationResult:
    with_locality: Metrics
    without_locality: Metrics

    @property
    def f1_delta(self) -> float:
        return self.with_locality.f1 - self.without_locality.f1


def induced_subgraph(graph: ProvenanceGraph, keep: set[str]) -> ProvenanceGraph:
    """Subgraph on ``keep`` (shares the registry; keeps isolated vertices)."""
    sub = ProvenanceGraph(graph.registry)
    for vid in graph.vertices:
        if vid in keep:
            sub._touch(graph.vertices[vid])
    for src, dst, tidx, ts in graph.edges:
        if src in keep and dst in keep:
            idx = len(sub.edges)
            sub.edges.append((src, dst, tidx, ts))
            sub._out[src].append(idx)
            sub._in[dst].append(idx)
    return sub


def detect(model, graph: ProvenanceGraph, threshold: float = 0.8, k: int = 2):
    """Flagged sets before and after locality post-processing."""
    _, predicted = predict_type(model, graph)
    ids = list(graph.vertices)
    flagged = {
        vid for vid, p in zip(ids, predicted)
        if model.classes[p] != graph.vertices[vid].kind.value
    }
    return flagged, postprocess(graph, flagged, threshold, k)


def run_ablation(graph: ProvenanceGraph, labels: LabelSet,
                 cfg: TrainConfig | None = None,
                 threshold: float = 0.8, k: int = 2,
                 classes=DEFAULT_CLASSES,
                 scorer_kind: str = "edge_rarity",
                 model=None) -> AblationResult:
    """Score the full graph with and without the locality correction.

    Uses the supplied pre-trained model when given; otherwise trains once
    on the benign-labeled subgraph of ``graph``.
    """
    if model is None:
        cfg = cfg or TrainConfig()
        benign_graph = induced_subgraph(graph, labels.benign)
        model = train_benign(benign_graph, cfg=cfg, classes=classes,
                             scorer_kind=scorer_kind)
    flagged_pre, flagged_post = detect(model, graph, threshold, k)
    return AblationResult(
        with_locality=compute_metrics(flagged_post, labels),
        without_locality=compute_metrics(flagged_pre, labels),
    )
