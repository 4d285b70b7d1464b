"""Server-side prototype processing.

The trainable prototype generator is a two-layer fully connected net with a
ReLU between, shared across every (class, hop) cell.  It is trained by a
contrastive loss over uploaded prototypes: same-class queries attract the
generated anchor, other-class queries repel it, and a margin equal to the
clamped maximum inter-class center similarity is added to positive terms to
sharpen boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePrototypeError
from .prototypes import Prototype


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegeneratePrototypeError("zero-norm vector in cosine similarity")
    return float(a @ b / (na * nb))


def _grid(uploads) -> dict[tuple[int, int], list[tuple[int, Prototype]]]:
    """(class, hop) -> [(client_id, prototype)] in ascending client order."""
    out: dict[tuple[int, int], list[tuple[int, Prototype]]] = {}
    for cid in sorted(uploads):
        for proto in uploads[cid]:
            out.setdefault((proto.class_id, proto.hop), []).append((cid, proto))
    return out


def naive_global_aggregate(uploads) -> list[Prototype]:
    """Support-weighted mean per (class, hop) over uploading clients only."""
    if not uploads:
        raise ValueError("no uploads to aggregate")
    grid = _grid(uploads)
    out = []
    for (c, h) in sorted(grid):
        entries = grid[(c, h)]
        total = float(sum(p.support for _, p in entries))
        lam = [p.support / total for _, p in entries]
        acc = lam[0] * entries[0][1].vector
        for (_, p), scale in zip(entries[1:], lam[1:]):
            acc = acc + scale * p.vector
        out.append(Prototype(c, h, acc, int(total)))
    return out


def adaptive_margin(centers: dict[int, np.ndarray], eps: float) -> float:
    """min(max inter-class center cosine similarity, eps); 0 when degenerate."""
    classes = sorted(centers)
    if len(classes) < 2:
        return 0.0
    best = -1.0
    for i, c in enumerate(classes):
        for c2 in classes[i + 1:]:
            best = max(best, cosine_similarity(centers[c], centers[c2]))
    return float(min(best, eps))


@dataclass
class QueryBatch:
    class_id: int
    hop: int
    positives: np.ndarray          # (k_pos, p)
    negatives: np.ndarray          # (k_neg, p), possibly empty
    margin: float
    centers: dict[int, np.ndarray] = field(default_factory=dict)


def class_centers(uploads) -> dict[int, np.ndarray]:
    """Unweighted per-class means over all uploaded prototypes (all hops)."""
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for cid in sorted(uploads):
        for p in uploads[cid]:
            if p.class_id in sums:
                sums[p.class_id] = sums[p.class_id] + p.vector
                counts[p.class_id] += 1
            else:
                sums[p.class_id] = p.vector.copy()
                counts[p.class_id] = 1
    return {c: sums[c] / counts[c] for c in sums}


def _augment(base: list[np.ndarray], candidates: list[np.ndarray],
             delta_s: float, rng: np.random.Generator) -> list[np.ndarray]:
    extra = int(np.ceil(delta_s * len(base)))
    extra = min(extra, len(candidates))
    if extra == 0:
        return list(base)
    picked = rng.choice(len(candidates), size=extra, replace=False)
    return list(base) + [candidates[i] for i in np.sort(picked)]


def build_query_sets(uploads, class_id: int, hop: int, delta_s: float, seed,
                     eps: float = 1.0,
                     centers: dict[int, np.ndarray] | None = None) -> QueryBatch:
    """Positive/negative query sets for one (class, hop) cell.

    Base positives are all hop-matching uploads of the class; a delta_s
    fraction of extra same-class prototypes is sampled uniformly without
    replacement from the other hops.  Negatives mirror this for the other
    classes.
    """
    if not 0.0 <= delta_s <= 1.0:
        raise ValueError("delta_s must be in [0,1]")
    grid = _grid(uploads)
    pos_base = [p.vector for _, p in grid.get((class_id, hop), [])]
    if not pos_base:
        raise ValueError(f"no uploads for class {class_id} at hop {hop}")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    pos_extra = [p.vector for (c, h) in sorted(grid) if c == class_id and h != hop
                 for _, p in grid[(c, h)]]
    neg_base = [p.vector for (c, h) in sorted(grid) if c != class_id and h == hop
                for _, p in grid[(c, h)]]
    neg_extra = [p.vector for (c, h) in sorted(grid) if c != class_id and h != hop
                 for _, p in grid[(c, h)]]
    positives = _augment(pos_base, pos_extra, delta_s, rng)
    negatives = _augment(neg_base, neg_extra, delta_s, rng)
    if centers is None:
        centers = class_centers(uploads)
    margin = adaptive_margin(centers, eps)
    p = len(pos_base[0])
    return QueryBatch(class_id, hop,
                      np.asarray(positives, dtype=np.float64).reshape(-1, p),
                      np.asarray(negatives, dtype=np.float64).reshape(-1, p),
                      margin, centers)


# -- trainable prototype generator ----------------------------------------------


@dataclass
class GpgState:
    base: np.ndarray        # (C, H+1, p) trainable prototypes
    w1: np.ndarray          # (p, p)
    b1: np.ndarray          # (p,)
    w2: np.ndarray          # (p, p)
    b2: np.ndarray          # (p,)
    universal: np.ndarray   # (C, H+1, p), refreshed by gpg_forward

    @property
    def num_classes(self) -> int:
        return self.base.shape[0]

    @property
    def num_hops(self) -> int:
        return self.base.shape[1]

    @property
    def proto_dim(self) -> int:
        return self.base.shape[2]


def init_gpg(num_classes: int, num_hops: int, proto_dim: int,
             rng: np.random.Generator) -> GpgState:
    base = rng.uniform(-0.5, 0.5, size=(num_classes, num_hops, proto_dim))
    w1 = rng.standard_normal((proto_dim, proto_dim)) / np.sqrt(proto_dim)
    w2 = rng.standard_normal((proto_dim, proto_dim)) / np.sqrt(proto_dim)
    state = GpgState(base, w1, np.zeros(proto_dim), w2, np.zeros(proto_dim),
                     np.zeros_like(base))
    gpg_forward(state)
    return state


def gpg_forward(state: GpgState) -> np.ndarray:
    flat = state.base.reshape(-1, state.proto_dim)
    hidden = np.maximum(flat @ state.w1 + state.b1, 0.0)
    out = hidden @ state.w2 + state.b2
    state.universal = out.reshape(state.base.shape)
    return state.universal


def _cosine_block(anchor: np.ndarray, queries: np.ndarray):
    """Cosines of anchor against query rows plus the anchor-gradient pieces."""
    na = np.linalg.norm(anchor)
    if na == 0.0:
        raise DegeneratePrototypeError("zero-norm anchor prototype")
    nq = np.linalg.norm(queries, axis=1)
    if np.any(nq == 0.0):
        raise DegeneratePrototypeError("zero-norm query prototype")
    cos = (queries @ anchor) / (na * nq)
    return cos, na, nq


def contrastive_loss(state: GpgState, batch: QueryBatch):
    """Loss of one (class, hop) cell and its gradient w.r.t. the anchor.

    loss = -log( sum_pos exp(D + M) / (sum_pos exp(D + M) + sum_neg exp(D)) ).
    The margin depends only on uploaded query centers, so it carries no
    gradient.  Returns (loss, d_anchor).
    """
    anchor = state.universal[batch.class_id, batch.hop]
    cos_p, na, nq_p = _cosine_block(anchor, batch.positives)
    e_pos = np.exp(cos_p + batch.margin)
    s_pos = e_pos.sum()
    if len(batch.negatives):
        cos_n, _, nq_n = _cosine_block(anchor, batch.negatives)
        e_neg = np.exp(cos_n)
        s_neg = e_neg.sum()
    else:
        cos_n = np.zeros(0)
        e_neg = np.zeros(0)
        s_neg = 0.0
    loss = float(np.log(s_pos + s_neg) - np.log(s_pos))
    # dL/dcos
    d_pos = e_pos * (1.0 / (s_pos + s_neg) - 1.0 / s_pos)
    d_neg = e_neg / (s_pos + s_neg)
    # dcos/danchor = q/(|a||q|) - cos * a/|a|^2
    d_anchor = np.zeros_like(anchor)
    if len(d_pos):
        d_anchor += (d_pos / nq_p) @ batch.positives / na
        d_anchor -= (d_pos @ cos_p) * anchor / na**2
    if len(d_neg):
        d_anchor += (d_neg / nq_n) @ batch.negatives / na
        d_anchor -= (d_neg @ cos_n) * anchor / na**2
    return loss, d_anchor


def gpg_gradients(state: GpgState, batches):
    """Total contrastive loss and gradients w.r.t. generator weights and the
    trainable base prototypes, reduced in (class, hop) order."""
    flat = state.base.reshape(-1, state.proto_dim)
    pre = flat @ state.w1 + state.b1
    hidden = np.maximum(pre, 0.0)
    grads = {
        "base": np.zeros_like(state.base),
        "w1": np.zeros_like(state.w1),
        "b1": np.zeros_like(state.b1),
        "w2": np.zeros_like(state.w2),
        "b2": np.zeros_like(state.b2),
    }
    total = 0.0
    for batch in sorted(batches, key=lambda b: (b.class_id, b.hop)):
        loss, d_anchor = contrastive_loss(state, batch)
        total += loss
        idx = batch.class_id * state.num_hops + batch.hop
        grads["w2"] += np.outer(hidden[idx], d_anchor)
        grads["b2"] += d_anchor
        d_hidden = state.w2 @ d_anchor
        d_pre = d_hidden * (pre[idx] > 0.0)
        grads["w1"] += np.outer(flat[idx], d_pre)
        grads["b1"] += d_pre
        grads["base"][batch.class_id, batch.hop] += state.w1 @ d_pre
    return total, grads


def train_gpg(state: GpgState, uploads, epochs: int, lr: float, delta_s: float,
              eps: float, seed) -> tuple[GpgState, list[float]]:
    """Plain gradient descent on the summed cell losses; query sets are built
    once per call.  Returns the state (universal refreshed) and the loss
    trajectory."""
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    centers = class_centers(uploads)
    grid_keys = sorted(_grid(uploads))
    batches = [build_query_sets(uploads, c, h, delta_s, rng, eps, centers)
               for (c, h) in grid_keys]
    trajectory = []
    for _ in range(epochs):
        gpg_forward(state)
        total, grads = gpg_gradients(state, batches)
        if not np.isfinite(total):
            raise DegeneratePrototypeError(f"non-finite server loss {total}")
        state.base -= lr * grads["base"]
        state.w1 -= lr * grads["w1"]
        state.b1 -= lr * grads["b1"]
        state.w2 -= lr * grads["w2"]
        state.b2 -= lr * grads["b2"]
        trajectory.append(total)
    gpg_forward(state)
    return state, trajectory


# -- personalization --------------------------------------------------------------


def client_signature(protos, num_classes: int, num_hops: int,
                     proto_dim: int) -> np.ndarray:
    """Concatenation over the full (class, hop) grid with zero blocks for
    cells the client did not upload."""
    sig = np.zeros((num_classes, num_hops, proto_dim))
    for p in protos:
        sig[p.class_id, p.hop] = p.vector
    return sig.ravel()


def client_similarity(uploads_i, uploads_k, num_classes: int, num_hops: int,
                      proto_dim: int) -> float:
    """Cosine similarity of two clients' zero-padded prototype signatures."""
    a = client_signature(uploads_i, num_classes, num_hops, proto_dim)
    b = client_signature(uploads_k, num_classes, num_hops, proto_dim)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def personalized_fusion(universal: np.ndarray, uploads, lam: float,
                        alpha: float) -> dict[int, list[Prototype]]:
    """Per-client convex mix of the universal prototypes with the
    support-weighted mean of similar clients' uploads (full grid broadcast)."""
    if not 0.0 <= lam <= 1.0 or not 0.0 <= alpha <= 1.0:
        raise ValueError("lam and alpha must be in [0,1]")
    num_classes, num_hops, proto_dim = universal.shape
    cids = sorted(uploads)
    sigs = {cid: client_signature(uploads[cid], num_classes, num_hops, proto_dim)
            for cid in cids}
    grid = _grid(uploads)
    out: dict[int, list[Prototype]] = {}
    for i in cids:
        fusion_set = [i]
        for k in cids:
            if k == i:
                continue
            na, nb = np.linalg.norm(sigs[i]), np.linalg.norm(sigs[k])
            sim = 0.0 if na == 0.0 or nb == 0.0 else float(sigs[i] @ sigs[k] / (na * nb))
            if sim >= lam:
                fusion_set.append(k)
        fusion_set.sort()
        personalized = []
        for c in range(num_classes):
            for h in range(num_hops):
                entries = [(cid, p) for cid, p in grid.get((c, h), [])
                           if cid in fusion_set]
                if entries:
                    total = float(sum(p.support for _, p in entries))
                    weights = [p.support / total for _, p in entries]
                    local = weights[0] * entries[0][1].vector
                    for (_, p), scale in zip(entries[1:], weights[1:]):
                        local = local + scale * p.vector
                    support = int(total)
                else:
                    local = universal[c, h]
                    support = 1
                vec = alpha * universal[c, h] + (1.0 - alpha) * local
                personalized.append(Prototype(c, h, vec, max(support, 1)))
        out[i] = personalized
    return out
