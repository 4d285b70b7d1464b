"""Synthetic dataset generators (stochastic block model and label-homophily).

Both emit plain :class:`~protofed.graph.Graph` objects whose labels coincide
with the planted structure, with Gaussian class-conditional features and
stratified train/val/test splits, so experiments need no downloads.
"""

from __future__ import annotations

import numpy as np

from .graph import MASK_TEST, MASK_TRAIN, MASK_VAL, Graph


def _balanced_labels(num_nodes: int, num_classes: int,
                     rng: np.random.Generator) -> np.ndarray:
    reps = -(-num_nodes // num_classes)
    labels = np.tile(np.arange(num_classes), reps)[:num_nodes]
    return rng.permutation(labels)


def _class_features(labels, num_features, mean_scale, noise_scale,
                    rng: np.random.Generator) -> np.ndarray:
    # scaled by 1/sqrt(f) so feature rows have O(1) norm at any dimension
    k = int(labels.max()) + 1
    means = mean_scale * rng.standard_normal((k, num_features))
    raw = means[labels] + noise_scale * rng.standard_normal((len(labels), num_features))
    return raw / np.sqrt(num_features)


def _stratified_masks(labels, train_frac, val_frac,
                      rng: np.random.Generator) -> np.ndarray:
    masks = np.full(len(labels), MASK_TEST, dtype=np.int8)
    for c in np.unique(labels):
        idx = rng.permutation(np.where(labels == c)[0])
        n_tr = max(1, int(round(train_frac * len(idx))))
        n_val = int(round(val_frac * len(idx)))
        masks[idx[:n_tr]] = MASK_TRAIN
        masks[idx[n_tr:n_tr + n_val]] = MASK_VAL
    return masks


def generate_sbm(num_nodes: int, num_blocks: int, p_in: float, p_out: float,
                 num_features: int, seed, mean_scale: float = 1.0,
                 noise_scale: float = 1.0, train_frac: float = 0.2,
                 val_frac: float = 0.4) -> Graph:
    """Stochastic block model with labels equal to the planted blocks."""
    if num_blocks < 1 or not (0 <= p_in <= 1) or not (0 <= p_out <= 1):
        raise ValueError("invalid SBM parameters")
    rng = np.random.default_rng(seed)
    labels = np.sort(_balanced_labels(num_nodes, num_blocks, rng))
    # upper-triangular Bernoulli draw, probability by block pair
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((num_nodes, num_nodes)) < probs, k=1)
    src, dst = np.nonzero(upper)
    edges = np.stack([src, dst], axis=1)
    features = _class_features(labels, num_features, mean_scale, noise_scale, rng)
    masks = _stratified_masks(labels, train_frac, val_frac, rng)
    return Graph.build(num_nodes, num_blocks, edges, features, labels, masks)


def generate_homophily(num_nodes: int, num_classes: int, homophily: float,
                       avg_degree: float, num_features: int, seed,
                       mean_scale: float = 1.0, noise_scale: float = 1.0,
                       train_frac: float = 0.2, val_frac: float = 0.4) -> Graph:
    """Planted-label graph with a target edge-homophily level.

    Each edge connects same-label endpoints with probability ``homophily``,
    so the measured edge homophily concentrates at the target.
    """
    if not 0 <= homophily <= 1:
        raise ValueError("homophily must be in [0,1]")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(num_nodes, num_classes, rng)
    by_class = [np.where(labels == c)[0] for c in range(num_classes)]
    target_m = int(round(avg_degree * num_nodes / 2.0))
    seen: set[tuple[int, int]] = set()
    pairs = []
    attempts = 0
    max_attempts = 80 * max(target_m, 1)
    while len(pairs) < target_m and attempts < max_attempts:
        attempts += 1
        u = int(rng.integers(num_nodes))
        if rng.random() < homophily:
            pool = by_class[labels[u]]
        else:
            c = int(rng.integers(num_classes - 1))
            if c >= labels[u]:
                c += 1
            pool = by_class[c]
        v = int(pool[rng.integers(len(pool))])
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(key)
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    features = _class_features(labels, num_features, mean_scale, noise_scale, rng)
    masks = _stratified_masks(labels, train_frac, val_frac, rng)
    return Graph.build(num_nodes, num_classes, edges, features, labels, masks)
