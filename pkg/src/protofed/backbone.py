"""Trainable local graph models built on dense numpy math.

Two backbone kinds share one weight-dict layout (``w_in``, ``w_out``,
``w_proj``):

* ``propagated_linear``: L rounds of normalized feature propagation followed
  by two linear maps (embedding then prediction head).
* ``message_passing``: the standard two-layer scheme, logits =
  A_sym . relu(A_sym X W_in) . W_out, with the embedding taken before the
  final linear map.

All math runs in float64 so that central finite differences at step 1e-5 are
meaningful.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DivergedError
from .graph import Graph
from .prototypes import AttentionScorer, alignment_loss

KIND_PROPAGATED = "propagated_linear"
KIND_MESSAGE_PASSING = "message_passing"
BACKBONE_KINDS = (KIND_PROPAGATED, KIND_MESSAGE_PASSING)


@dataclass
class Backbone:
    kind: str
    num_layers: int          # propagation depth (receptive field)
    in_dim: int
    hidden_dim: int
    num_classes: int
    proto_dim: int
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.kind == KIND_MESSAGE_PASSING and self.num_layers != 2:
            raise ValueError("message_passing backbone is fixed at 2 layers")
        expect = {
            "w_in": (self.in_dim, self.hidden_dim),
            "w_out": (self.hidden_dim, self.num_classes),
            "w_proj": (self.hidden_dim, self.proto_dim),
        }
        for name, shape in expect.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, "
                                 f"expected {shape}")


def init_backbone(kind: str, num_layers: int, in_dim: int, hidden_dim: int,
                  num_classes: int, proto_dim: int,
                  rng: np.random.Generator) -> Backbone:
    weights = {
        "w_in": rng.standard_normal((in_dim, hidden_dim)) / np.sqrt(in_dim),
        "w_out": rng.standard_normal((hidden_dim, num_classes)) / np.sqrt(hidden_dim),
        "w_proj": rng.standard_normal((hidden_dim, proto_dim)) / np.sqrt(hidden_dim),
    }
    return Backbone(kind, num_layers, in_dim, hidden_dim, num_classes,
                    proto_dim, weights)


@dataclass
class GraphOperator:
    """Static per-graph compute context: the normalized adjacency and the
    pre-propagated feature matrix the backbone consumes."""

    a_hat: object          # scipy CSR, symmetric-normalized with self-loops
    prop: np.ndarray       # A^L X (propagated_linear) or A X (message_passing)


def make_operator(backbone: Backbone, graph: Graph) -> GraphOperator:
    a_hat = graph.sym_normalized_adjacency
    x = graph.features
    if backbone.kind == KIND_PROPAGATED:
        prop = x
        for _ in range(backbone.num_layers):
            prop = a_hat @ prop
    else:
        prop = a_hat @ x
    return GraphOperator(a_hat, np.asarray(prop, dtype=np.float64))


def forward(backbone: Backbone, op: GraphOperator):
    """Returns (embeddings, logits, hidden-preactivation or None)."""
    w = backbone.weights
    if backbone.kind == KIND_PROPAGATED:
        emb = op.prop @ w["w_in"]
        return emb, emb @ w["w_out"], None
    h = op.prop @ w["w_in"]
    emb = op.a_hat @ np.maximum(h, 0.0)
    return emb, emb @ w["w_out"], h


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict(backbone: Backbone, op: GraphOperator):
    """Hard labels (argmax, ties to the lowest class id) and soft labels."""
    _, logits, _ = forward(backbone, op)
    soft = softmax(logits)
    return logits.argmax(axis=1), soft


@dataclass
class TrainSignal:
    logits: np.ndarray
    embeddings: np.ndarray
    ce: float
    proto: float
    total: float


def local_loss(backbone: Backbone, op: GraphOperator, labels, labeled_idx,
               scorer: AttentionScorer | None = None, plans=(),
               personalized=None, mu: float = 0.0,
               literal_normalization: bool = False):
    """Cross-entropy on supervised nodes plus mu-weighted prototype alignment.

    Returns (TrainSignal, grads, prototypes) where grads holds exact analytic
    gradients for every backbone weight and, when the prototype term is live,
    the attention scorer weights.
    """
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    if labeled_idx.size == 0:
        raise ValueError("empty train set")
    w = backbone.weights
    emb, logits, hidden = forward(backbone, op)

    logp = log_softmax(logits)
    y = np.asarray(labels)[labeled_idx]
    ce = float(-logp[labeled_idx, y].mean())
    d_logits = np.zeros_like(logits)
    d_logits[labeled_idx] = softmax(logits[labeled_idx])
    d_logits[labeled_idx, y] -= 1.0
    d_logits[labeled_idx] /= len(labeled_idx)

    grads = {"w_out": emb.T @ d_logits}
    d_emb = d_logits @ w["w_out"].T

    proto = 0.0
    protos = []
    use_proto = mu != 0.0 and personalized and len(plans) > 0
    if use_proto:
        zp = emb @ w["w_proj"]
        proto, d_zp, d_s1, d_s2, protos = alignment_loss(
            zp, plans, scorer, personalized, literal_normalization)
        grads["w_proj"] = mu * (emb.T @ d_zp)
        grads["scorer_w1"] = mu * d_s1
        grads["scorer_w2"] = mu * d_s2
        d_emb = d_emb + mu * (d_zp @ w["w_proj"].T)
    else:
        grads["w_proj"] = np.zeros_like(w["w_proj"])
        if scorer is not None:
            grads["scorer_w1"] = np.zeros_like(scorer.w1)
            grads["scorer_w2"] = np.zeros_like(scorer.w2)

    if backbone.kind == KIND_PROPAGATED:
        grads["w_in"] = op.prop.T @ d_emb
    else:
        d_relu = op.a_hat.T @ d_emb
        d_hidden = d_relu * (hidden > 0.0)
        grads["w_in"] = op.prop.T @ d_hidden

    total = ce + mu * proto
    return TrainSignal(logits, emb, ce, proto, total), grads, protos


def train_epoch(backbone: Backbone, op: GraphOperator, labels, labeled_idx,
                lr: float, mu: float = 0.0, scorer: AttentionScorer | None = None,
                plans=(), personalized=None,
                literal_normalization: bool = False) -> TrainSignal:
    """One full-batch plain gradient-descent step, updating in place."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    signal, grads, _ = local_loss(backbone, op, labels, labeled_idx, scorer,
                                  plans, personalized, mu, literal_normalization)
    if not np.isfinite(signal.total):
        raise DivergedError(f"non-finite training loss {signal.total}")
    for name in ("w_in", "w_out", "w_proj"):
        backbone.weights[name] -= lr * grads[name]
    if scorer is not None and "scorer_w1" in grads:
        scorer.w1 -= lr * grads["scorer_w1"]
        scorer.w2 -= lr * grads["scorer_w2"]
    return signal


# -- weight snapshots -----------------------------------------------------------

WEIGHT_KEYS = ("w_in", "w_out", "w_proj")


def serialize_weights(backbone: Backbone) -> bytes:
    """JSON shape header (u32 length prefix) + flat little-endian float64 blob."""
    header = json.dumps({
        "kind": backbone.kind,
        "num_layers": backbone.num_layers,
        "arrays": [[k, list(backbone.weights[k].shape)] for k in WEIGHT_KEYS],
    }).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(backbone.weights[k], dtype="<f8").tobytes()
                    for k in WEIGHT_KEYS)
    return struct.pack("<I", len(header)) + header + blob


def deserialize_weights(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    (hlen,) = struct.unpack_from("<I", buf, 0)
    header = json.loads(buf[4:4 + hlen].decode("utf-8"))
    weights = {}
    off = 4 + hlen
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off)
        weights[name] = arr.reshape(shape).astype(np.float64)
        off += 8 * count
    return header, weights


def average_weights(entries) -> dict[str, np.ndarray]:
    """Support-weighted average of weight dicts; weights are normalized first
    so a single entry passes through bit-identically."""
    total = float(sum(weight for _, weight in entries))
    if total <= 0:
        lam = [1.0 / len(entries)] * len(entries)
    else:
        lam = [weight / total for _, weight in entries]
    out = {}
    for k in entries[0][0].keys():
        acc = lam[0] * entries[0][0][k]
        for (wd, _), scale in zip(entries[1:], lam[1:]):
            acc = acc + scale * wd[k]
        out[k] = acc
    return out
