import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protofed.errors import ConfigRangeError
from protofed.generators import generate_sbm
from protofed.graph import Graph
from protofed.partition import (balanced_partition, louvain_communities,
                                louvain_partition, modularity)

from .conftest import random_graph


def two_triangles() -> Graph:
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    return Graph.build(6, 2, edges, np.zeros((6, 1)), [0] * 3 + [1] * 3,
                       np.zeros(6, dtype=np.int8))


def cycle(n: int) -> Graph:
    edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph.build(n, 2, edges, np.zeros((n, 1)),
                       np.zeros(n, dtype=int), np.zeros(n, dtype=np.int8))


class TestModularity:
    def test_matches_networkx_oracle(self, rng):
        nx = pytest.importorskip("networkx")
        g = random_graph(rng, num_nodes=25, edge_prob=0.2)
        gx = nx.Graph()
        gx.add_nodes_from(range(g.num_nodes))
        gx.add_edges_from(map(tuple, g.edges))
        assignment = rng.integers(0, 3, size=g.num_nodes)
        comms = [set(np.where(assignment == c)[0].tolist()) for c in range(3)]
        comms = [c for c in comms if c]
        want = nx.algorithms.community.modularity(gx, comms)
        assert abs(modularity(g, assignment) - want) < 1e-12


class TestLouvain:
    def test_disjoint_triangles(self):
        part = louvain_partition(two_triangles(), 2, seed=0)
        groups = {tuple(sorted(np.where(part.assignment == c)[0]))
                  for c in range(2)}
        assert groups == {(0, 1, 2), (3, 4, 5)}

    def test_single_client_identity(self, rng):
        g = random_graph(rng)
        part = louvain_partition(g, 1, seed=0)
        assert part.num_clients == 1
        assert np.all(part.assignment == 0)
        assert part.client_subgraphs[0].num_nodes == g.num_nodes

    def test_sbm_block_recovery(self):
        from scipy.optimize import linear_sum_assignment
        g = generate_sbm(100, 4, p_in=0.3, p_out=0.01, num_features=4, seed=5)
        part = louvain_partition(g, 4, seed=5)
        # best client-to-block matching must cover >= 90% of nodes
        confusion = np.zeros((4, 4))
        for v in range(g.num_nodes):
            confusion[part.assignment[v], g.labels[v]] += 1
        rows, cols = linear_sum_assignment(-confusion)
        assert confusion[rows, cols].sum() >= 0.9 * g.num_nodes

    def test_errors_on_too_many_clients(self, rng):
        g = random_graph(rng)
        with pytest.raises(ConfigRangeError):
            louvain_partition(g, g.num_nodes + 1, seed=0)

    @pytest.mark.invariant("louvain-modularity-nondecreasing")
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 5000))
    def test_phase_modularity_never_decreases(self, seed):
        g = random_graph(np.random.default_rng(seed), num_nodes=30, edge_prob=0.15)
        _, trace = louvain_communities(g, seed)
        deltas = np.diff(trace)
        assert np.all(deltas >= -1e-12)

    def test_split_path_to_singletons(self):
        g = cycle(6)
        part = louvain_partition(g, 6, seed=0)
        assert part.num_clients == 6
        assert all(s.num_nodes == 1 for s in part.client_subgraphs)


class TestBalanced:
    def test_cycle_two_halves(self):
        part = balanced_partition(cycle(10), 2, seed=0)
        sizes = sorted(s.num_nodes for s in part.client_subgraphs)
        assert sizes == [5, 5]

    def test_singletons(self, rng):
        g = random_graph(rng, num_nodes=9)
        part = balanced_partition(g, 9, seed=1)
        assert all(s.num_nodes == 1 for s in part.client_subgraphs)

    def test_size_ratio_on_random_graph(self):
        g = random_graph(np.random.default_rng(3), num_nodes=200, edge_prob=0.03)
        part = balanced_partition(g, 10, seed=3)
        sizes = [s.num_nodes for s in part.client_subgraphs]
        assert max(sizes) / min(sizes) <= 1.1

    def test_sizes_differ_by_at_most_one(self, rng):
        g = random_graph(rng, num_nodes=23)
        part = balanced_partition(g, 5, seed=2)
        sizes = [s.num_nodes for s in part.client_subgraphs]
        assert max(sizes) - min(sizes) <= 1


@pytest.mark.invariant("partition-covers-once")
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 5000), clients=st.integers(1, 6),
       method=st.sampled_from(["louvain", "balanced"]))
def test_partition_covers_all_nodes_and_edges_subset(seed, clients, method):
    from protofed.partition import partition_graph
    g = random_graph(np.random.default_rng(seed), num_nodes=24)
    part = partition_graph(g, method, clients, seed)
    # every node in exactly one client
    counts = np.zeros(g.num_nodes, dtype=int)
    for l2g in part.local_to_global:
        counts[l2g] += 1
    assert np.all(counts == 1)
    # induced edges map back into the original edge set; id maps invert
    original = {tuple(e) for e in g.edges.tolist()}
    for cid, sub in enumerate(part.client_subgraphs):
        l2g = part.local_to_global[cid]
        g2l = part.global_to_local(cid)
        assert all(g2l[int(gid)] == i for i, gid in enumerate(l2g))
        for a, b in sub.edges:
            ga, gb = int(l2g[a]), int(l2g[b])
            assert (min(ga, gb), max(ga, gb)) in original


@pytest.mark.invariant("partition-deterministic")
def test_partitions_deterministic():
    g = random_graph(np.random.default_rng(11), num_nodes=40)
    for method in ("louvain", "balanced"):
        from protofed.partition import partition_graph
        a = partition_graph(g, method, 4, seed=9)
        b = partition_graph(g, method, 4, seed=9)
        assert np.array_equal(a.assignment, b.assignment)
