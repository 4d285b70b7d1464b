"""Client-side prototype construction.

Prototypes live in the shared projection space.  The hop-0 cells reduce
exactly (bitwise) to plain per-class means; for larger hops every anchor
aggregates the projected embeddings of same-class neighbors, weighted by a
softmax over a small trainable scoring MLP.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .graph import Graph, hop_balls

WIRE_HEADER = struct.Struct("<HHI")   # class u16, hop u16, support u32


@dataclass(frozen=True)
class Prototype:
    class_id: int
    hop: int
    vector: np.ndarray   # (p,)
    support: int


@dataclass
class AttentionScorer:
    """Two-layer MLP mapping a projected embedding to a scalar score."""

    w1: np.ndarray   # (p, hidden)
    w2: np.ndarray   # (hidden,)

    def scores(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z @ self.w1) @ self.w2


def init_scorer(proto_dim: int, hidden: int, rng: np.random.Generator) -> AttentionScorer:
    w1 = rng.standard_normal((proto_dim, hidden)) / np.sqrt(proto_dim)
    w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
    return AttentionScorer(w1, w2)


def zero_scorer(proto_dim: int, hidden: int) -> AttentionScorer:
    """All-zero weights: uniform attention within every neighborhood."""
    return AttentionScorer(np.zeros((proto_dim, hidden)), np.zeros(hidden))


def pseudo_annotate(soft_labels, true_labels, train_mask,
                    confidence_threshold: float) -> np.ndarray:
    """Effective labels: ground truth on train nodes, confident argmax
    pseudo-labels elsewhere, -1 for nodes unusable in prototype construction."""
    if not 0.0 <= confidence_threshold <= 1.0:
        raise ValueError("confidence_threshold must be in [0,1]")
    soft = np.asarray(soft_labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    eff = np.full(len(soft), -1, dtype=np.int64)
    eff[train_mask] = np.asarray(true_labels)[train_mask]
    confident = (~train_mask) & (soft.max(axis=1) >= confidence_threshold)
    eff[confident] = soft.argmax(axis=1)[confident]
    return eff


@dataclass(frozen=True)
class CellPlan:
    """Anchor/neighborhood structure for one (class, hop) cell.

    ``members`` concatenates the same-class neighborhoods of all anchors;
    ``starts``/``lengths`` delimit segments, one per anchor.  Anchors and
    members are in ascending node order.
    """

    class_id: int
    hop: int
    anchors: np.ndarray
    members: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray


def build_cell_plans(ball_nodes, ball_dists, eff_labels, hops) -> list[CellPlan]:
    eff = np.asarray(eff_labels)
    plans = []
    for c in sorted(int(c) for c in np.unique(eff) if c >= 0):
        anchors = np.where(eff == c)[0].astype(np.int64)
        for h in hops:
            members = []
            lengths = np.empty(len(anchors), dtype=np.int64)
            for i, v in enumerate(anchors):
                nodes = ball_nodes[v]
                hit = nodes[(ball_dists[v] <= h) & (eff[nodes] == c)]
                members.append(hit)
                lengths[i] = len(hit)
            starts = np.zeros(len(anchors), dtype=np.int64)
            np.cumsum(lengths[:-1], out=starts[1:])
            plans.append(CellPlan(c, h, anchors, np.concatenate(members),
                                  starts, lengths))
    return plans


def _cell_forward(zp, plan: CellPlan, scorer: AttentionScorer, literal: bool):
    zm = zp[plan.members]
    t = np.tanh(zm @ scorer.w1)
    s = t @ scorer.w2
    seg_max = np.maximum.reduceat(s, plan.starts)
    e = np.exp(s - np.repeat(seg_max, plan.lengths))
    den = np.add.reduceat(e, plan.starts)
    w = e / np.repeat(den, plan.lengths)
    inner = np.add.reduceat(w[:, None] * zm, plan.starts, axis=0)
    if literal:
        inner = inner / plan.lengths[:, None]
    proto = inner.mean(axis=0)
    return proto, (zm, t, w)


def _cell_backward(dproto, zp_grad, plan: CellPlan, scorer: AttentionScorer,
                   cache, literal: bool):
    """Accumulate gradients of ``dproto . proto`` into zp_grad and return
    the scorer weight gradients of this cell."""
    zm, t, w = cache
    a = len(plan.anchors)
    factor = np.repeat(1.0 / plan.lengths, plan.lengths) / a if literal \
        else np.full(len(plan.members), 1.0 / a)
    # inner product of upstream gradient with each member embedding
    g = (zm @ dproto) * factor
    seg_dot = np.add.reduceat(w * g, plan.starts)
    ds = w * (g - np.repeat(seg_dot, plan.lengths))
    # direct path through w_j * z_j
    dzm = (w * factor)[:, None] * dproto[None, :]
    # scorer path: s = tanh(zm @ w1) @ w2
    dw2 = t.T @ ds
    dpre = (ds[:, None] * scorer.w2[None, :]) * (1.0 - t * t)
    dw1 = zm.T @ dpre
    dzm += dpre @ scorer.w1.T
    np.add.at(zp_grad, plan.members, dzm)
    return dw1, dw2


def prototypes_from_plans(zp, plans, scorer: AttentionScorer,
                          literal_normalization: bool = False) -> list[Prototype]:
    out = []
    for plan in plans:
        proto, _ = _cell_forward(zp, plan, scorer, literal_normalization)
        out.append(Prototype(plan.class_id, plan.hop, proto, len(plan.anchors)))
    return out


def topology_aware_prototypes(graph: Graph, zp, eff_labels,
                              scorer: AttentionScorer, hops,
                              literal_normalization: bool = False) -> list[Prototype]:
    """Multi-hop attention prototypes over same-class neighborhoods."""
    hops = tuple(hops)
    if any(h < 0 for h in hops):
        raise ValueError("hops must be non-negative")
    ball_nodes, ball_dists = hop_balls(graph, max(hops))
    plans = build_cell_plans(ball_nodes, ball_dists, eff_labels, hops)
    return prototypes_from_plans(zp, plans, scorer, literal_normalization)


def naive_local_prototypes(zp, eff_labels) -> list[Prototype]:
    """Plain per-class means of usable projected embeddings (hop 0 only)."""
    eff = np.asarray(eff_labels)
    out = []
    for c in sorted(int(c) for c in np.unique(eff) if c >= 0):
        members = np.where(eff == c)[0]
        out.append(Prototype(c, 0, zp[members].mean(axis=0), len(members)))
    return out


def alignment_loss(zp, plans, scorer: AttentionScorer, personalized,
                   literal_normalization: bool = False):
    """Sum of Frobenius distances between local prototypes and received
    personalized prototypes, with gradients through construction.

    ``personalized`` maps (class_id, hop) to a target vector; cells without a
    target contribute nothing.  Returns (loss, d_zp, d_scorer_w1, d_scorer_w2,
    prototypes).
    """
    zp_grad = np.zeros_like(zp)
    dw1 = np.zeros_like(scorer.w1)
    dw2 = np.zeros_like(scorer.w2)
    loss = 0.0
    protos = []
    for plan in plans:
        proto, cache = _cell_forward(zp, plan, scorer, literal_normalization)
        protos.append(Prototype(plan.class_id, plan.hop, proto, len(plan.anchors)))
        target = personalized.get((plan.class_id, plan.hop))
        if target is None:
            continue
        diff = proto - target
        nrm = float(np.linalg.norm(diff))
        loss += nrm
        if nrm <= 0.0:
            continue
        g1, g2 = _cell_backward(diff / nrm, zp_grad, plan, scorer, cache,
                                literal_normalization)
        dw1 += g1
        dw2 += g2
    return loss, zp_grad, dw1, dw2, protos


def add_prototype_noise(protos, dim_fraction: float, sigma_rel: float,
                        seed) -> list[Prototype]:
    """Gaussian noise on a random subset of dimensions, scaled to each
    prototype's norm so the same fraction is comparable across datasets."""
    if not 0.0 <= dim_fraction <= 1.0:
        raise ValueError("dim_fraction must be in [0,1]")
    if sigma_rel < 0.0:
        raise ValueError("sigma_rel must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for proto in protos:
        p = len(proto.vector)
        k = int(np.ceil(dim_fraction * p))
        if k == 0 or sigma_rel == 0.0:
            out.append(proto)
            continue
        dims = rng.choice(p, size=k, replace=False)
        sigma = sigma_rel * float(np.linalg.norm(proto.vector)) / np.sqrt(p)
        vec = proto.vector.copy()
        vec[dims] += rng.normal(0.0, sigma, size=k)
        out.append(Prototype(proto.class_id, proto.hop, vec, proto.support))
    return out


# -- wire format ---------------------------------------------------------------


def encode_prototypes(protos) -> bytes:
    """Per prototype: 8-byte header (class u16, hop u16, support u32) followed
    by p little-endian float64 values."""
    chunks = []
    for proto in protos:
        chunks.append(WIRE_HEADER.pack(proto.class_id, proto.hop, proto.support))
        chunks.append(np.ascontiguousarray(proto.vector, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_prototypes(buf: bytes, proto_dim: int) -> list[Prototype]:
    rec = WIRE_HEADER.size + 8 * proto_dim
    if len(buf) % rec:
        raise ValueError("truncated prototype buffer")
    out = []
    for off in range(0, len(buf), rec):
        c, h, support = WIRE_HEADER.unpack_from(buf, off)
        vec = np.frombuffer(buf, dtype="<f8", count=proto_dim,
                            offset=off + WIRE_HEADER.size).astype(np.float64)
        out.append(Prototype(c, h, vec, support))
    return out


def prototype_bytes(count: int, proto_dim: int) -> int:
    return count * (WIRE_HEADER.size + 8 * proto_dim)
