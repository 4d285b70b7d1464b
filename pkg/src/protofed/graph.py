"""Graph storage, dataset directory I/O, hop queries, and sparsity transforms.

A :class:`Graph` is immutable after construction.  The edge list holds
normalized undirected pairs (``src < dst``, deduplicated, no self-loops);
the propagation adjacency carries exactly one self-loop per node and is
materialized lazily in CSR form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError

MASK_TRAIN, MASK_VAL, MASK_TEST = 0, 1, 2
MASK_NAMES = ("train", "val", "test")

DATASET_FILES = ("edges.tsv", "features.csv", "labels.csv", "splits.csv", "meta.json")


def normalize_edges(edges, num_nodes: int) -> np.ndarray:
    """Collapse duplicate/reversed pairs, drop self-loops, sort lexicographically."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise ValueError("edge endpoint out of range")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    keep = lo != hi
    e = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return e.reshape(-1, 2)


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    num_classes: int
    edges: np.ndarray        # (m, 2) int64, normalized undirected pairs
    features: np.ndarray     # (n, f) float64
    labels: np.ndarray       # (n,) int64 in [0, num_classes)
    masks: np.ndarray        # (n,) int8, MASK_TRAIN / MASK_VAL / MASK_TEST
    labeled_mask: np.ndarray  # (n,) bool, train nodes whose labels supervise

    @staticmethod
    def build(num_nodes, num_classes, edges, features, labels, masks,
              labeled_mask=None) -> "Graph":
        edges = normalize_edges(edges, num_nodes)
        features = np.asarray(features, dtype=np.float64).reshape(num_nodes, -1)
        labels = np.asarray(labels, dtype=np.int64)
        masks = np.asarray(masks, dtype=np.int8)
        if labeled_mask is None:
            labeled_mask = masks == MASK_TRAIN
        labeled_mask = np.asarray(labeled_mask, dtype=bool)
        return Graph(num_nodes, num_classes, edges, features, labels, masks,
                     labeled_mask)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary adjacency without self-loops."""
        n, e = self.num_nodes, self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def adjacency_with_loops(self) -> sp.csr_matrix:
        """Propagation adjacency: exactly one self-loop per node."""
        a = self.adjacency + sp.identity(self.num_nodes, format="csr")
        a.sort_indices()
        return a

    @cached_property
    def sym_normalized_adjacency(self) -> sp.csr_matrix:
        """D^{-1/2} (A + I) D^{-1/2}; spectral radius bounded by 1."""
        a = self.adjacency_with_loops
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        d = sp.diags(inv_sqrt)
        out = (d @ a @ d).tocsr()
        out.sort_indices()
        return out


def bfs_distances(graph: Graph, source: int, max_hop: int) -> np.ndarray:
    """Hop distances from ``source``, -1 beyond ``max_hop``."""
    adj = graph.adjacency
    indptr, indices = adj.indptr, adj.indices
    dist = np.full(graph.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    frontier = [source]
    for d in range(1, max_hop + 1):
        nxt = []
        for v in frontier:
            for u in indices[indptr[v]:indptr[v + 1]]:
                if dist[u] < 0:
                    dist[u] = d
                    nxt.append(u)
        if not nxt:
            break
        frontier = nxt
    return dist


def khop_class_neighborhood(graph: Graph, node: int, hop: int, class_id: int,
                            labels: np.ndarray) -> np.ndarray:
    """Same-class nodes within ``hop`` of ``node``, sorted by id.

    ``labels`` may be ground-truth or effective (pseudo) labels; entries < 0
    never match.  ``hop=0`` always returns just the node itself; for larger
    hops the node is a member only when its own label matches.
    """
    if hop < 0:
        raise ValueError("hop must be >= 0")
    if hop == 0:
        return np.array([node], dtype=np.int64)
    dist = bfs_distances(graph, node, hop)
    hit = (dist >= 0) & (np.asarray(labels) == class_id)
    return np.where(hit)[0].astype(np.int64)


def hop_balls(graph: Graph, max_hop: int):
    """Per-node arrays of (neighbors within max_hop, their distances).

    Node order inside each ball is ascending id, which keeps every
    downstream aggregation deterministic.
    """
    nodes, dists = [], []
    for v in range(graph.num_nodes):
        dist = bfs_distances(graph, v, max_hop)
        members = np.where(dist >= 0)[0].astype(np.int64)
        nodes.append(members)
        dists.append(dist[members])
    return nodes, dists


def induced_subgraph(graph: Graph, node_ids) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on ``node_ids`` plus the local-to-global id map."""
    local_to_global = np.sort(np.asarray(node_ids, dtype=np.int64))
    global_to_local = np.full(graph.num_nodes, -1, dtype=np.int64)
    global_to_local[local_to_global] = np.arange(len(local_to_global))
    e = graph.edges
    keep = (global_to_local[e[:, 0]] >= 0) & (global_to_local[e[:, 1]] >= 0)
    sub_edges = global_to_local[e[keep]]
    sub = Graph.build(
        num_nodes=len(local_to_global),
        num_classes=graph.num_classes,
        edges=sub_edges,
        features=graph.features[local_to_global],
        labels=graph.labels[local_to_global],
        masks=graph.masks[local_to_global],
        labeled_mask=graph.labeled_mask[local_to_global],
    )
    return sub, local_to_global


def sparsify(graph: Graph, mode: str, keep_ratio: float, seed) -> Graph:
    """Random sparsity transform.

    ``edge`` drops each undirected edge independently (implicit self-loops are
    never touched), ``feature`` zeroes a random subset of non-train feature
    rows, ``label`` withdraws supervision from a random subset of train nodes
    while their split tag stays.
    """
    if not 0.0 <= keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in [0,1], got {keep_ratio}")
    rng = np.random.default_rng(seed)
    if mode == "edge":
        keep = rng.random(len(graph.edges)) < keep_ratio
        return replace(graph, edges=graph.edges[keep])
    if mode == "feature":
        cand = np.where(graph.masks != MASK_TRAIN)[0]
        k = int(round((1.0 - keep_ratio) * len(cand)))
        drop = rng.choice(cand, size=k, replace=False) if k else np.array([], dtype=np.int64)
        feats = graph.features.copy()
        feats[np.sort(drop)] = 0.0
        return replace(graph, features=feats)
    if mode == "label":
        cand = np.where(graph.labeled_mask)[0]
        k = int(round((1.0 - keep_ratio) * len(cand)))
        drop = rng.choice(cand, size=k, replace=False) if k else np.array([], dtype=np.int64)
        lm = graph.labeled_mask.copy()
        lm[np.sort(drop)] = False
        return replace(graph, labeled_mask=lm)
    raise ValueError(f"unknown sparsify mode {mode!r}")


def edge_homophily(graph: Graph) -> float:
    """Fraction of edges whose endpoints share a label."""
    if len(graph.edges) == 0:
        return 0.0
    same = graph.labels[graph.edges[:, 0]] == graph.labels[graph.edges[:, 1]]
    return float(same.mean())


# -- dataset directory format ------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataFormatError("missing file", file=str(path))
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_graph(dir_path) -> Graph:
    """Load a dataset directory (edges.tsv, features.csv, labels.csv,
    splits.csv, meta.json) into a normalized :class:`Graph`."""
    d = Path(dir_path)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise DataFormatError("missing file", file=str(meta_path))
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        n = int(meta["num_nodes"])
        f = int(meta["num_features"])
        k = int(meta["num_classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"bad meta.json: {exc}", file=str(meta_path)) from exc
    if n <= 0 or f <= 0 or k <= 0:
        raise DataFormatError("meta counts must be positive", file=str(meta_path))

    edges_path = d / "edges.tsv"
    pairs = []
    for i, line in enumerate(_read_lines(edges_path), 1):
        parts = line.split()
        if len(parts) != 2:
            raise DataFormatError(f"expected 'src<TAB>dst', got {line!r}",
                                  file=str(edges_path), line=i)
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"non-integer node id in {line!r}",
                                  file=str(edges_path), line=i) from None
        if not (0 <= a < n and 0 <= b < n):
            raise DataFormatError(f"node id out of range [0,{n}) in {line!r}",
                                  file=str(edges_path), line=i)
        pairs.append((a, b))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    feat_path = d / "features.csv"
    lines = _read_lines(feat_path)
    if len(lines) != n:
        raise DataFormatError(f"expected {n} rows, found {len(lines)}",
                              file=str(feat_path), line=len(lines))
    features = np.empty((n, f), dtype=np.float64)
    for i, line in enumerate(lines, 1):
        parts = line.split(",")
        if len(parts) != f:
            raise DataFormatError(f"expected {f} values, found {len(parts)}",
                                  file=str(feat_path), line=i)
        try:
            features[i - 1] = np.asarray(parts, dtype=np.float64)
        except ValueError:
            raise DataFormatError("non-numeric feature value",
                                  file=str(feat_path), line=i) from None

    label_path = d / "labels.csv"
    lines = _read_lines(label_path)
    if len(lines) != n:
        raise DataFormatError(f"expected {n} rows, found {len(lines)}",
                              file=str(label_path), line=len(lines))
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines, 1):
        try:
            y = int(line.strip())
        except ValueError:
            raise DataFormatError(f"non-integer label {line!r}",
                                  file=str(label_path), line=i) from None
        if not 0 <= y < k:
            raise DataFormatError(f"label {y} outside [0,{k})",
                                  file=str(label_path), line=i)
        labels[i - 1] = y

    split_path = d / "splits.csv"
    lines = _read_lines(split_path)
    if len(lines) != n:
        raise DataFormatError(f"expected {n} rows, found {len(lines)}",
                              file=str(split_path), line=len(lines))
    masks = np.empty(n, dtype=np.int8)
    for i, line in enumerate(lines, 1):
        tag = line.strip()
        if tag not in MASK_NAMES:
            raise DataFormatError(f"split must be train|val|test, got {tag!r}",
                                  file=str(split_path), line=i)
        masks[i - 1] = MASK_NAMES.index(tag)

    return Graph.build(n, k, edges, features, labels, masks)


def save_graph(graph: Graph, dir_path) -> None:
    """Write a graph as a dataset directory (inverse of :func:`load_graph`)."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for a, b in graph.edges:
            fh.write(f"{a}\t{b}\n")
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in graph.features:
            fh.write(",".join(format(x, ".17g") for x in row))
            fh.write("\n")
    with open(d / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        for y in graph.labels:
            fh.write(f"{y}\n")
    with open(d / "splits.csv", "w", encoding="utf-8", newline="\n") as fh:
        for m in graph.masks:
            fh.write(MASK_NAMES[m] + "\n")
    meta = {"num_nodes": graph.num_nodes, "num_features": graph.num_features,
            "num_classes": graph.num_classes}
    with open(d / "meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
