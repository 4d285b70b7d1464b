import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protofed.errors import DataFormatError
from protofed.graph import (MASK_TRAIN, Graph, edge_homophily, hop_balls,
                            khop_class_neighborhood, load_graph, save_graph,
                            sparsify)

from .conftest import random_graph


def write_dataset(tmp_path, edges, features, labels, splits, meta):
    (tmp_path / "edges.tsv").write_text(
        "".join(f"{a}\t{b}\n" for a, b in edges), encoding="utf-8")
    (tmp_path / "features.csv").write_text(
        "".join(",".join(str(x) for x in row) + "\n" for row in features),
        encoding="utf-8")
    (tmp_path / "labels.csv").write_text(
        "".join(f"{y}\n" for y in labels), encoding="utf-8")
    (tmp_path / "splits.csv").write_text(
        "".join(f"{s}\n" for s in splits), encoding="utf-8")
    import json
    (tmp_path / "meta.json").write_text(json.dumps(meta), encoding="utf-8")


def path3_dataset(tmp_path):
    write_dataset(
        tmp_path,
        edges=[(0, 1), (1, 2)],
        features=[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
        labels=[0, 0, 1],
        splits=["train", "val", "test"],
        meta={"num_nodes": 3, "num_features": 2, "num_classes": 2},
    )


class TestLoadGraph:
    def test_path_graph_counts_and_self_loops(self, tmp_path):
        path3_dataset(tmp_path)
        g = load_graph(tmp_path)
        assert g.num_edges == 2
        a = g.adjacency_with_loops
        # CSR row degree is graph degree + 1 (exactly one self-loop each)
        degrees = np.diff(a.indptr)
        assert list(degrees) == [2, 3, 2]
        assert np.allclose(a.diagonal(), 1.0)

    def test_duplicate_and_reversed_edges_collapse(self, tmp_path):
        write_dataset(
            tmp_path,
            edges=[(0, 1), (1, 0), (0, 1)],
            features=[[0.0], [1.0]],
            labels=[0, 1],
            splits=["train", "test"],
            meta={"num_nodes": 2, "num_features": 1, "num_classes": 2},
        )
        g = load_graph(tmp_path)
        assert g.num_edges == 1

    def test_input_self_loop_kept_once(self, tmp_path):
        write_dataset(
            tmp_path,
            edges=[(0, 0), (0, 1)],
            features=[[0.0], [1.0]],
            labels=[0, 1],
            splits=["train", "test"],
            meta={"num_nodes": 2, "num_features": 1, "num_classes": 2},
        )
        g = load_graph(tmp_path)
        a = g.adjacency_with_loops
        assert a[0, 0] == 1.0  # exactly one self-loop despite the input loop
        assert g.num_edges == 1

    def test_missing_file(self, tmp_path):
        path3_dataset(tmp_path)
        (tmp_path / "labels.csv").unlink()
        with pytest.raises(DataFormatError) as err:
            load_graph(tmp_path)
        assert "labels.csv" in str(err.value)

    def test_ragged_feature_row_reports_line(self, tmp_path):
        path3_dataset(tmp_path)
        (tmp_path / "features.csv").write_text("1.0,0.0\n0.5\n1.0,1.0\n")
        with pytest.raises(DataFormatError) as err:
            load_graph(tmp_path)
        assert "features.csv:2" in str(err.value)

    def test_label_out_of_range_reports_line(self, tmp_path):
        path3_dataset(tmp_path)
        (tmp_path / "labels.csv").write_text("0\n5\n1\n")
        with pytest.raises(DataFormatError) as err:
            load_graph(tmp_path)
        assert "labels.csv:2" in str(err.value)

    def test_edge_endpoint_out_of_range_reports_line(self, tmp_path):
        path3_dataset(tmp_path)
        (tmp_path / "edges.tsv").write_text("0\t1\n1\t7\n")
        with pytest.raises(DataFormatError) as err:
            load_graph(tmp_path)
        assert "edges.tsv:2" in str(err.value)

    def test_bad_split_tag(self, tmp_path):
        path3_dataset(tmp_path)
        (tmp_path / "splits.csv").write_text("train\nvalidation\ntest\n")
        with pytest.raises(DataFormatError) as err:
            load_graph(tmp_path)
        assert "splits.csv:2" in str(err.value)

    def test_round_trip(self, tmp_path, rng):
        g = random_graph(rng, num_nodes=20)
        save_graph(g, tmp_path / "ds")
        g2 = load_graph(tmp_path / "ds")
        assert g2.num_nodes == g.num_nodes
        assert np.array_equal(g2.edges, g.edges)
        assert np.array_equal(g2.labels, g.labels)
        assert np.array_equal(g2.masks, g.masks)
        assert np.allclose(g2.features, g.features)


def floyd_warshall(g: Graph) -> np.ndarray:
    # independent all-pairs oracle
    n = g.num_nodes
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for a, b in g.edges:
        dist[a, b] = dist[b, a] = 1.0
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


class TestKhop:
    def test_h0_is_self_regardless_of_label(self, rng):
        g = random_graph(rng)
        labels = g.labels
        for v in range(g.num_nodes):
            out = khop_class_neighborhood(g, v, 0, (labels[v] + 1) % 3, labels)
            assert list(out) == [v]

    def test_path_graph_by_hand(self):
        g = Graph.build(3, 2, [(0, 1), (1, 2)], np.zeros((3, 1)),
                        [0, 0, 1], [0, 1, 2])
        out = khop_class_neighborhood(g, 0, 2, 0, g.labels)
        assert list(out) == [0, 1]

    def test_matches_floyd_warshall_oracle(self, rng):
        g = random_graph(rng, num_nodes=20, edge_prob=0.15)
        dist = floyd_warshall(g)
        for v in range(g.num_nodes):
            for h in (1, 2, 3):
                for c in range(g.num_classes):
                    got = set(khop_class_neighborhood(g, v, h, c, g.labels))
                    want = {u for u in range(g.num_nodes)
                            if dist[v, u] <= h and g.labels[u] == c}
                    assert got == want

    @pytest.mark.invariant("khop-monotone")
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), v=st.integers(0, 11), c=st.integers(0, 2))
    def test_monotone_in_hops(self, seed, v, c):
        g = random_graph(np.random.default_rng(seed))
        prev: set = set()
        for h in range(4):
            cur = set(khop_class_neighborhood(g, v, h, c, g.labels))
            if h >= 2:  # h=0 forces {v} which may not carry class c
                assert prev <= cur
            prev = cur

    def test_hop_balls_match_khop(self, rng):
        g = random_graph(rng, num_nodes=15)
        nodes, dists = hop_balls(g, 2)
        for v in range(g.num_nodes):
            for c in range(g.num_classes):
                want = set(khop_class_neighborhood(g, v, 2, c, g.labels))
                got = {int(u) for u, d in zip(nodes[v], dists[v])
                       if d <= 2 and g.labels[u] == c}
                if g.labels[v] != c:
                    want.discard(v)
                assert got == want


class TestSparsify:
    def test_keep_all_is_identity(self, rng):
        g = random_graph(rng)
        for mode in ("edge", "feature", "label"):
            g2 = sparsify(g, mode, 1.0, seed=7)
            assert g2.edges.tobytes() == g.edges.tobytes()
            assert g2.features.tobytes() == g.features.tobytes()
            assert g2.labeled_mask.tobytes() == g.labeled_mask.tobytes()

    def test_edge_keep_zero_only_self_loops_remain(self, rng):
        g = random_graph(rng)
        g2 = sparsify(g, "edge", 0.0, seed=7)
        assert g2.num_edges == 0
        a = g2.adjacency_with_loops
        assert a.nnz == g.num_nodes  # nothing but the self-loops

    def test_edge_binomial_bound(self):
        rng = np.random.default_rng(0)
        edges = [(i, j) for i in range(60) for j in range(i + 1, 60)][:1000]
        g = Graph.build(60, 2, edges, np.zeros((60, 1)),
                        np.zeros(60, dtype=int), np.zeros(60, dtype=np.int8))
        counts = [sparsify(g, "edge", 0.5, seed=s).num_edges for s in range(10)]
        assert abs(np.mean(counts) - 500) <= 50

    def test_feature_mode_only_non_train(self, rng):
        g = random_graph(rng, num_nodes=40)
        g2 = sparsify(g, "feature", 0.0, seed=3)
        train = g.masks == MASK_TRAIN
        assert np.allclose(g2.features[~train], 0.0)
        assert np.array_equal(g2.features[train], g.features[train])

    def test_label_mode_keeps_masks(self, rng):
        g = random_graph(rng, num_nodes=40)
        g2 = sparsify(g, "label", 0.5, seed=3)
        assert np.array_equal(g2.masks, g.masks)
        assert g2.labeled_mask.sum() < g.labeled_mask.sum() or g.labeled_mask.sum() <= 1
        assert np.all(g.labeled_mask[g2.labeled_mask])  # subset

    def test_invalid_ratio(self, rng):
        g = random_graph(rng)
        with pytest.raises(ValueError):
            sparsify(g, "edge", 1.5, seed=0)

    @pytest.mark.invariant("ops-deterministic")
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), keep=st.floats(0, 1))
    def test_deterministic_under_seed(self, seed, keep):
        g = random_graph(np.random.default_rng(1))
        a = sparsify(g, "edge", keep, seed=seed)
        b = sparsify(g, "edge", keep, seed=seed)
        assert a.edges.tobytes() == b.edges.tobytes()


def test_masks_partition_nodes(rng):
    g = random_graph(rng)
    assert set(np.unique(g.masks)) <= {0, 1, 2}


def test_edge_homophily_extremes():
    g = Graph.build(4, 2, [(0, 1), (2, 3)], np.zeros((4, 1)),
                    [0, 0, 1, 1], np.zeros(4, dtype=np.int8))
    assert edge_homophily(g) == 1.0
    g2 = Graph.build(4, 2, [(0, 2), (1, 3)], np.zeros((4, 1)),
                     [0, 0, 1, 1], np.zeros(4, dtype=np.int8))
    assert edge_homophily(g2) == 0.0
