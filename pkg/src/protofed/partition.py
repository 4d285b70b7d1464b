"""Partitioning a global graph into client subgraphs.

Two strategies: modularity-maximizing Louvain (communities merged/split to the
requested client count) and balanced seeded BFS region-growing.  Both are
deterministic under a fixed seed and drop cross-client edges (pure induced
subgraphs).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigRangeError
from .graph import Graph, induced_subgraph


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray                 # (n,) int64 client ids
    client_subgraphs: tuple[Graph, ...]
    local_to_global: tuple[np.ndarray, ...]

    @property
    def num_clients(self) -> int:
        return len(self.client_subgraphs)

    def global_to_local(self, client_id: int) -> dict[int, int]:
        l2g = self.local_to_global[client_id]
        return {int(g): i for i, g in enumerate(l2g)}


def modularity(graph: Graph, assignment) -> float:
    """Newman modularity of a node-to-community assignment (simple graph)."""
    assignment = np.asarray(assignment)
    m = len(graph.edges)
    if m == 0:
        return 0.0
    deg = np.zeros(graph.num_nodes)
    np.add.at(deg, graph.edges[:, 0], 1.0)
    np.add.at(deg, graph.edges[:, 1], 1.0)
    q = 0.0
    for c in np.unique(assignment):
        inside = assignment == c
        intra = np.sum(inside[graph.edges[:, 0]] & inside[graph.edges[:, 1]])
        dc = deg[inside].sum()
        q += intra / m - (dc / (2.0 * m)) ** 2
    return float(q)


# -- Louvain ------------------------------------------------------------------


class _Level:
    """Weighted aggregate graph: neighbor weights exclude self; ``loops``
    holds collapsed intra-community edge weight per super-node."""

    def __init__(self, neighbors, loops, two_m):
        self.neighbors = neighbors          # list[dict[int, float]]
        self.loops = np.asarray(loops, dtype=np.float64)
        self.two_m = two_m
        self.degree = np.array(
            [sum(nb.values()) + 2.0 * self.loops[v] for v, nb in enumerate(neighbors)]
        )

    @property
    def size(self) -> int:
        return len(self.neighbors)

    def modularity(self, com) -> float:
        com = np.asarray(com)
        inside = self.loops.copy()
        for v, nb in enumerate(self.neighbors):
            for u, w in nb.items():
                if u > v and com[u] == com[v]:
                    inside[v] += w
        q = 0.0
        for c in np.unique(com):
            members = com == c
            q += 2.0 * inside[members].sum() / self.two_m
            q -= (self.degree[members].sum() / self.two_m) ** 2
        return q


def _local_move(level: _Level, rng: np.random.Generator) -> np.ndarray:
    com = np.arange(level.size)
    sigma_tot = level.degree.copy()
    while True:
        moved = 0
        for v in rng.permutation(level.size):
            cv = com[v]
            neigh_w: dict[int, float] = {}
            for u, w in level.neighbors[v].items():
                neigh_w[com[u]] = neigh_w.get(com[u], 0.0) + w
            sigma_tot[cv] -= level.degree[v]
            best_c = cv
            best_gain = neigh_w.get(cv, 0.0) - sigma_tot[cv] * level.degree[v] / level.two_m
            for c in sorted(neigh_w):
                if c == cv:
                    continue
                gain = neigh_w[c] - sigma_tot[c] * level.degree[v] / level.two_m
                if gain > best_gain + 1e-12:
                    best_gain, best_c = gain, c
            sigma_tot[best_c] += level.degree[v]
            if best_c != cv:
                com[v] = best_c
                moved += 1
        if moved == 0:
            return com


def _aggregate(level: _Level, com: np.ndarray) -> tuple[_Level, np.ndarray]:
    labels, dense = np.unique(com, return_inverse=True)
    k = len(labels)
    neighbors = [dict() for _ in range(k)]
    loops = np.zeros(k)
    for v, nb in enumerate(level.neighbors):
        cv = dense[v]
        loops[cv] += level.loops[v]
        for u, w in nb.items():
            if u <= v:
                continue
            cu = dense[u]
            if cu == cv:
                loops[cv] += w
            else:
                neighbors[cv][cu] = neighbors[cv].get(cu, 0.0) + w
                neighbors[cu][cv] = neighbors[cu].get(cv, 0.0) + w
    return _Level(neighbors, loops, level.two_m), dense


def louvain_communities(graph: Graph, seed) -> tuple[np.ndarray, list[float]]:
    """Louvain community detection.

    Returns (node-to-community assignment, modularity after each phase).
    The trace is non-decreasing; a drop beyond 1e-12 raises AssertionError.
    """
    rng = np.random.default_rng(seed)
    n = graph.num_nodes
    if len(graph.edges) == 0:
        return np.arange(n), [0.0]
    neighbors = [dict() for _ in range(n)]
    for a, b in graph.edges:
        neighbors[a][int(b)] = neighbors[a].get(int(b), 0.0) + 1.0
        neighbors[b][int(a)] = neighbors[b].get(int(a), 0.0) + 1.0
    level = _Level(neighbors, np.zeros(n), two_m=2.0 * len(graph.edges))
    node_to_comm = np.arange(n)
    trace = [level.modularity(np.arange(n))]
    while True:
        com = _local_move(level, rng)
        q = level.modularity(com)
        assert q - trace[-1] >= -1e-12, "modularity decreased across a phase"
        trace.append(q)
        level, dense = _aggregate(level, com)
        node_to_comm = dense[node_to_comm]
        if level.size == len(np.unique(com)) and np.all(com == np.arange(len(com))):
            break
        if len(trace) >= 3 and q - trace[-2] <= 1e-12:
            break
    return node_to_comm, trace


# -- sizing helpers -----------------------------------------------------------


def _groups_from_assignment(assignment: np.ndarray) -> list[np.ndarray]:
    groups = [np.where(assignment == c)[0] for c in np.unique(assignment)]
    groups.sort(key=lambda g: int(g[0]))
    return groups


def _bfs_regions(graph: Graph, nodes: np.ndarray, quotas: list[int],
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Grow ``len(quotas)`` regions of exact sizes over ``nodes`` by BFS.

    When a frontier exhausts (disconnected remainder) growth jumps to a fresh
    seeded start, so quotas are always met exactly.
    """
    adj = graph.adjacency
    indptr, indices = adj.indptr, adj.indices
    in_pool = np.zeros(graph.num_nodes, dtype=bool)
    in_pool[nodes] = True
    unassigned = set(int(v) for v in nodes)
    regions = []
    for quota in quotas:
        grown = []
        queue: deque[int] = deque()
        while len(grown) < quota:
            if not queue:
                pool = np.fromiter(sorted(unassigned), dtype=np.int64)
                queue.append(int(rng.choice(pool)))
            v = queue.popleft()
            if v not in unassigned:
                continue
            unassigned.remove(v)
            grown.append(v)
            for u in indices[indptr[v]:indptr[v + 1]]:
                if in_pool[u] and int(u) in unassigned:
                    queue.append(int(u))
        regions.append(np.sort(np.asarray(grown, dtype=np.int64)))
    return regions


def _resize_groups(graph: Graph, groups: list[np.ndarray], target: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    groups = [np.sort(g) for g in groups]
    # too many parts: merge the two smallest (ties by lowest member id)
    while len(groups) > target:
        order = sorted(range(len(groups)), key=lambda i: (len(groups[i]), int(groups[i][0])))
        a, b = order[0], order[1]
        merged = np.sort(np.concatenate([groups[a], groups[b]]))
        groups = [g for i, g in enumerate(groups) if i not in (a, b)] + [merged]
    # too few: split the largest in half by BFS region-growing
    while len(groups) < target:
        order = sorted(range(len(groups)), key=lambda i: (-len(groups[i]), int(groups[i][0])))
        big = groups.pop(order[0])
        half = len(big) // 2
        parts = _bfs_regions(graph, big, [len(big) - half, half], rng)
        groups.extend(parts)
    groups.sort(key=lambda g: int(g[0]))
    return groups


def _assemble(graph: Graph, groups: list[np.ndarray]) -> Partition:
    assignment = np.full(graph.num_nodes, -1, dtype=np.int64)
    subgraphs, maps = [], []
    for cid, g in enumerate(groups):
        assignment[g] = cid
        sub, l2g = induced_subgraph(graph, g)
        subgraphs.append(sub)
        maps.append(l2g)
    if np.any(assignment < 0):
        raise AssertionError("partition does not cover all nodes")
    return Partition(assignment, tuple(subgraphs), tuple(maps))


def louvain_partition(graph: Graph, target_clients: int, seed) -> Partition:
    """Louvain communities merged/split greedily by size to the client count."""
    if not 1 <= target_clients <= graph.num_nodes:
        raise ConfigRangeError(
            f"target_clients must be in [1,{graph.num_nodes}], got {target_clients}")
    comm, _ = louvain_communities(graph, seed)
    rng = np.random.default_rng(seed)
    groups = _resize_groups(graph, _groups_from_assignment(comm), target_clients, rng)
    return _assemble(graph, groups)


def balanced_partition(graph: Graph, target_clients: int, seed) -> Partition:
    """Seeded BFS region-growing; part sizes differ by at most one node."""
    if not 1 <= target_clients <= graph.num_nodes:
        raise ConfigRangeError(
            f"target_clients must be in [1,{graph.num_nodes}], got {target_clients}")
    rng = np.random.default_rng(seed)
    n, k = graph.num_nodes, target_clients
    base, extra = divmod(n, k)
    quotas = [base + 1] * extra + [base] * (k - extra)
    groups = _bfs_regions(graph, np.arange(n), quotas, rng)
    groups.sort(key=lambda g: int(g[0]))
    return _assemble(graph, groups)


def partition_graph(graph: Graph, method: str, target_clients: int, seed) -> Partition:
    if method == "louvain":
        return louvain_partition(graph, target_clients, seed)
    if method == "balanced":
        return balanced_partition(graph, target_clients, seed)
    raise ConfigRangeError(f"unknown partition method {method!r}")
