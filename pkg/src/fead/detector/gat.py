"""Two-layer graph-attention classifier with hand-rolled backpropagation.

Layer 1 concatenates its attention heads, layer 2 averages them; ELU sits
between the layers. Attention scores come from a learned vector applied to
the concatenated transformed features of each (center, neighbor) pair,
passed through a leaky rectifier and normalized over the neighborhood.
Attention runs over the deduplicated undirected adjacency with self-loops
injected, so isolated vertices still have a defined neighborhood; event
multiplicities live in the degree features instead.

Everything is float64 with a fixed summation order, so a fixed seed gives
bitwise-identical parameters and predictions across runs. The per-edge
segment reductions go through the `_kernels` backend (compiled when built,
numpy otherwise).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .._kernels import segment_max, segment_sum
from ..errors import ConfigError, InputError
from ..provgraph import ProvenanceGraph
from .features import FeatureTransform, build_feature_matrix, make_scorer

LEAKY_SLOPE = 0.2
DEFAULT_CLASSES = ("process", "file", "socket")


@dataclass(frozen=True)
class TrainConfig:
    heads: int = 8
    hidden_dim: int = 128
    batch_size: int = 500
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if min(self.heads, self.hidden_dim, self.batch_size, self.epochs + 1) < 1:
            raise ConfigError("heads, hidden_dim, batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be > 0 and weight_decay >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class GatModel:
    """Parameters plus the feature pipeline needed to reuse them."""

    classes: tuple[str, ...]
    registry_size: int
    heads: int
    hidden_dim: int
    dropout: float
    W1: list  # per head: (input_dim, hidden_dim)
    a1: list  # per head: (2 * hidden_dim,)
    W2: list  # per head: (heads * hidden_dim, class_count)
    a2: list  # per head: (2 * class_count,)
    transform: FeatureTransform
    scorer_kind: str
    train_config: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return 2 * self.registry_size + 1

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def parameters(self):
        """(name, array) pairs in a fixed order."""
        out = []
        for h in range(self.heads):
            out.append((f"W1[{h}]", self.W1[h]))
            out.append((f"a1[{h}]", self.a1[h]))
        for h in range(self.heads):
            out.append((f"W2[{h}]", self.W2[h]))
            out.append((f"a2[{h}]", self.a2[h]))
        return out


def init_model(registry_size: int, classes, cfg: TrainConfig,
               transform: FeatureTransform, scorer_kind: str) -> GatModel:
    """Seeded Glorot-uniform initialization, parameters drawn in fixed order."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    input_dim = 2 * registry_size + 1
    class_count = len(classes)

    def glorot(fan_in, fan_out, shape):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    W1, a1 = [], []
    for _ in range(cfg.heads):
        W1.append(glorot(input_dim, cfg.hidden_dim, (input_dim, cfg.hidden_dim)))
        a1.append(glorot(2 * cfg.hidden_dim, 1, (2 * cfg.hidden_dim,)))
    W2, a2 = [], []
    for _ in range(cfg.heads):
        W2.append(glorot(cfg.heads * cfg.hidden_dim, class_count,
                         (cfg.heads * cfg.hidden_dim, class_count)))
        a2.append(glorot(2 * class_count, 1, (2 * class_count,)))
    return GatModel(
        classes=tuple(classes),
        registry_size=registry_size,
        heads=cfg.heads,
        hidden_dim=cfg.hidden_dim,
        dropout=cfg.dropout,
        W1=W1, a1=a1, W2=W2, a2=a2,
        transform=transform,
        scorer_kind=scorer_kind,
        train_config={
            "heads": cfg.heads, "hidden_dim": cfg.hidden_dim,
            "batch_size": cfg.batch_size, "learning_rate": cfg.learning_rate,
            "weight_decay": cfg.weight_decay, "dropout": cfg.dropout,
            "epochs": cfg.epochs, "seed": cfg.seed,
        },
    )


def build_attention_edges(graph: ProvenanceGraph):
    """(src, dst) arrays: unique undirected vertex pairs plus self-loops,
    sorted by (dst, src) so the aggregation order never varies."""
    index = {vid: i for i, vid in enumerate(graph.vertices)}
    pairs = set()
    for s, d, _, _ in graph.edges:
        si, di = index[s], index[d]
        pairs.add((si, di))
        pairs.add((di, si))
    for i in range(len(index)):
        pairs.add((i, i))
    ordered = sorted(pairs, key=lambda p: (p[1], p[0]))
    src = np.array([p[0] for p in ordered], dtype=np.int64)
    dst = np.array([p[1] for p in ordered], dtype=np.int64)
    return src, dst


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _elu(x):
    # expm1 only on the non-positive side; np.where evaluates both branches
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _keep_mask(rng, shape, p):
    # inverted-dropout mask: 0 with probability p, else 1/(1-p)
    return (rng.random(shape) >= p) / (1.0 - p)


def _layer_forward(X, W, a, src, dst, n, alpha_keep=None):
    d = W.shape[1]
    g = X @ W
    center = g @ a[:d]
    neigh = g @ a[d:]
    raw = center[dst] + neigh[src]
    e = _leaky(raw)
    shift = segment_max(e, dst, n)
    ex = np.exp(e - shift[dst])
    denom = segment_sum(ex, dst, n)
    alpha = ex / denom[dst]
    alpha_used = alpha if alpha_keep is None else alpha * alpha_keep
    out = segment_sum(alpha_used[:, None] * g[src], dst, n)
    cache = {"X": X, "W": W, "a": a, "g": g, "raw": raw, "alpha": alpha,
             "alpha_keep": alpha_keep, "alpha_used": alpha_used}
    return out, cache


def _layer_backward(dout, cache, src, dst, n):
    X, W, a = cache["X"], cache["W"], cache["a"]
    g, raw = cache["g"], cache["raw"]
    alpha, alpha_keep, alpha_used = cache["alpha"], cache["alpha_keep"], cache["alpha_used"]
    d = W.shape[1]

    dmsg = dout[dst]
    dalpha_used = np.sum(dmsg * g[src], axis=1)
    dg = segment_sum(alpha_used[:, None] * dmsg, src, n)
    dalpha = dalpha_used if alpha_keep is None else dalpha_used * alpha_keep
    # softmax over each dst segment
    seg_dot = segment_sum(alpha * dalpha, dst, n)
    de = alpha * (dalpha - seg_dot[dst])
    draw = de * np.where(raw > 0, 1.0, LEAKY_SLOPE)
    dcenter = segment_sum(draw, dst, n)
    dneigh = segment_sum(draw, src, n)
    dg += dcenter[:, None] * a[:d][None, :]
    dg += dneigh[:, None] * a[d:][None, :]
    da = np.concatenate([g.T @ dcenter, g.T @ dneigh])
    dW = X.T @ dg
    dX = dg @ W.T
    return dX, dW, da


def _forward(model: GatModel, X, src, dst, training=False, rng=None):
    """Returns logits and the cache required for the backward pass."""
    n = X.shape[0]
    p = model.dropout if training else 0.0
    if p > 0.0 and rng is None:
        raise ConfigError("training forward with dropout needs an rng")
    cache = {"n": n, "p": p}

    X_in = X
    if p > 0.0:
        cache["x_keep"] = _keep_mask(rng, X.shape, p)
        X_in = X * cache["x_keep"]
    cache["X_in"] = X_in

    outs1, caches1 = [], []
    for h in range(model.heads):
        keep = _keep_mask(rng, src.shape, p) if p > 0.0 else None
        out, c = _layer_forward(X_in, model.W1[h], model.a1[h], src, dst, n, keep)
        outs1.append(out)
        caches1.append(c)
    H1 = np.concatenate(outs1, axis=1)
    Z = _elu(H1)
    cache.update(H1=H1, Z=Z, caches1=caches1)

    Z_in = Z
    if p > 0.0:
        cache["z_keep"] = _keep_mask(rng, Z.shape, p)
        Z_in = Z * cache["z_keep"]
    cache["Z_in"] = Z_in

    logits = np.zeros((n, model.class_count), dtype=np.float64)
    caches2 = []
    for h in range(model.heads):
        keep = _keep_mask(rng, src.shape, p) if p > 0.0 else None
        out, c = _layer_forward(Z_in, model.W2[h], model.a2[h], src, dst, n, keep)
        logits += out
        caches2.append(c)
    logits /= model.heads
    cache["caches2"] = caches2
    return logits, cache


def _backward(model: GatModel, cache, dlogits, src, dst):
    n = cache["n"]
    grads = {"W1": [], "a1": [], "W2": [], "a2": []}
    dZ_in = np.zeros_like(cache["Z_in"])
    dhead2 = dlogits / model.heads
    for h in range(model.heads):
        dX2, dW2, da2 = _layer_backward(dhead2, cache["caches2"][h], src, dst, n)
        dZ_in += dX2
        grads["W2"].append(dW2)
        grads["a2"].append(da2)
    dZ = dZ_in if "z_keep" not in cache else dZ_in * cache["z_keep"]
    H1 = cache["H1"]
    dH1 = dZ * np.where(H1 > 0, 1.0, np.exp(np.minimum(H1, 0.0)))
    dX_in = np.zeros_like(cache["X_in"])
    d = model.hidden_dim
    for h in range(model.heads):
        sl = dH1[:, h * d:(h + 1) * d]
        dX1, dW1, da1 = _layer_backward(sl, cache["caches1"][h], src, dst, n)
        dX_in += dX1
        grads["W1"].append(dW1)
        grads["a1"].append(da1)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def masked_cross_entropy(logits, labels_idx, batch):
    """Mean NLL over the batch rows; returns the loss and dlogits."""
    probs = softmax(logits[batch])
    rows = np.arange(len(batch))
    loss = -np.mean(np.log(probs[rows, labels_idx[batch]]))
    dbatch = probs.copy()
    dbatch[rows, labels_idx[batch]] -= 1.0
    dbatch /= len(batch)
    dlogits = np.zeros_like(logits)
    dlogits[batch] = dbatch
    return float(loss), dlogits


def gradients(model: GatModel, X, src, dst, labels_idx, batch,
              training=False, rng=None):
    """Loss and analytic parameter gradients for one (possibly masked) batch."""
    logits, cache = _forward(model, X, src, dst, training=training, rng=rng)
    loss, dlogits = masked_cross_entropy(logits, labels_idx, batch)
    grads = _backward(model, cache, dlogits, src, dst)
    return loss, grads


def gat_forward(model: GatModel, graph: ProvenanceGraph, features,
                training: bool = False, rng=None):
    """Per-vertex logits over transformed features (rows follow graph order)."""
    src, dst = build_attention_edges(graph)
    logits, _ = _forward(model, features, src, dst, training=training, rng=rng)
    return logits


def attention_row_sums(model: GatModel, X, src, dst):
    """Per-vertex sums of attention coefficients for every layer and head
    (they must all be 1 by construction; exposed for verification)."""
    n = X.shape[0]
    _, cache = _forward(model, X, src, dst, training=False)
    sums = []
    for c in cache["caches1"] + cache["caches2"]:
        sums.append(segment_sum(c["alpha"], dst, n))
    return sums


def _labels_to_idx(graph: ProvenanceGraph, labels, classes):
    class_index = {c: i for i, c in enumerate(classes)}
    idx = np.zeros(len(graph.vertices), dtype=np.int64)
    for i, (vid, ent) in enumerate(graph.vertices.items()):
        kind = labels[vid] if labels is not None else ent.kind.value
        if kind not in class_index:
            raise InputError(f"vertex {vid!r} has kind {kind!r} outside the class set")
        idx[i] = class_index[kind]
    return idx


def train_benign(graph: ProvenanceGraph, labels=None,
                 cfg: TrainConfig | None = None,
                 classes=DEFAULT_CLASSES,
                 scorer_kind: str = "edge_rarity") -> GatModel:
    """Fit the classifier on a benign graph, deterministic given cfg.seed.

    ``labels`` maps vertex id → class name; by default the entity kinds
    recorded in the graph are used. Plain gradient descent with weight
    decay folded into the gradient; minibatches are seeded shuffles with
    the loss masked to the batch over a full-graph forward.
    """
    cfg = cfg or TrainConfig()
    labels_idx = _labels_to_idx(graph, labels, classes)
    if len(np.unique(labels_idx)) < 2:
        raise InputError("training needs at least 2 classes present")

    scorer = make_scorer(scorer_kind).fit(graph)
    _, raw = build_feature_matrix(graph, scorer)
    transform = FeatureTransform.fit(raw)
    X = transform.apply(raw)
    src, dst = build_attention_edges(graph)

    model = init_model(len(graph.registry), classes, cfg, transform, scorer_kind)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = gradients(model, X, src, dst, labels_idx, batch,
                                 training=True, rng=rng)
            for kind in ("W1", "a1", "W2", "a2"):
                params = getattr(model, kind)
                for h in range(model.heads):
                    params[h] -= cfg.learning_rate * (
                        grads[kind][h] + cfg.weight_decay * params[h]
                    )
    return model


def predict_type(model: GatModel, graph: ProvenanceGraph, features=None):
    """Per-vertex class probabilities and predicted class indices.

    Ties argmax to the lowest class index. Features default to the graph's
    raw features pushed through the model's stored transform.
    """
    if len(graph.registry) != model.registry_size:
        raise ConfigError(
            f"graph registry size {len(graph.registry)} does not match the "
            f"model ({model.registry_size})"
        )
    if features is None:
        scorer = make_scorer(model.scorer_kind).fit(graph)
        _, raw = build_feature_matrix(graph, scorer)
        features = model.transform.apply(raw)
    logits = gat_forward(model, graph, features, training=False)
    probs = softmax(logits)
    predicted = np.argmax(probs, axis=1)
    return probs, predicted


# --- model snapshot ---------------------------------------------------------


def model_to_json(model: GatModel) -> str:
    doc = {
        "format_version": 1,
        "classes": list(model.classes),
        "registry_size": model.registry_size,
        "heads": model.heads,
        "hidden_dim": model.hidden_dim,
        "dropout": model.dropout,
        "scorer_kind": model.scorer_kind,
        "train_config": model.train_config,
        "transform": model.transform.to_json(),
        "params": {
            "W1": [w.tolist() for w in model.W1],
            "a1": [a.tolist() for a in model.a1],
            "W2": [w.tolist() for w in model.W2],
            "a2": [a.tolist() for a in model.a2],
        },
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> GatModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid model snapshot: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != 1:
        raise InputError("invalid model snapshot: unsupported format_version")
    params = doc["params"]
    return GatModel(
        classes=tuple(doc["classes"]),
        registry_size=int(doc["registry_size"]),
        heads=int(doc["heads"]),
        hidden_dim=int(doc["hidden_dim"]),
        dropout=float(doc["dropout"]),
        W1=[np.array(w, dtype=np.float64) for w in params["W1"]],
        a1=[np.array(a, dtype=np.float64) for a in params["a1"]],
        W2=[np.array(w, dtype=np.float64) for w in params["W2"]],
        a2=[np.array(a, dtype=np.float64) for a in params["a2"]],
        transform=FeatureTransform.from_json(doc["transform"]),
        scorer_kind=doc["scorer_kind"],
        train_config=dict(doc.get("train_config", {})),
    )
