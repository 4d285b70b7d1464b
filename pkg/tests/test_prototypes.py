import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protofed.graph import Graph, hop_balls, khop_class_neighborhood
from protofed.prototypes import (AttentionScorer, Prototype,
                                 add_prototype_noise, build_cell_plans,
                                 decode_prototypes, encode_prototypes,
                                 init_scorer, naive_local_prototypes,
                                 prototype_bytes, pseudo_annotate,
                                 topology_aware_prototypes, zero_scorer)

from .conftest import random_graph


class TestPseudoAnnotate:
    def test_threshold_one_labels_only_train(self, rng):
        soft = rng.dirichlet(np.ones(4), size=10)  # non-degenerate rows
        train = np.zeros(10, dtype=bool)
        train[[1, 4]] = True
        labels = rng.integers(0, 4, size=10)
        eff = pseudo_annotate(soft, labels, train, 1.0)
        assert eff[1] == labels[1] and eff[4] == labels[4]
        assert np.all(eff[~train] == -1)

    def test_threshold_zero_labels_everything(self, rng):
        soft = rng.dirichlet(np.ones(4), size=10)
        train = np.zeros(10, dtype=bool)
        labels = rng.integers(0, 4, size=10)
        eff = pseudo_annotate(soft, labels, train, 0.0)
        assert np.all(eff >= 0)
        assert np.array_equal(eff, soft.argmax(axis=1))

    def test_matches_brute_force_filter(self, rng):
        soft = rng.dirichlet(np.ones(3) * 0.3, size=30)
        train = rng.random(30) < 0.3
        labels = rng.integers(0, 3, size=30)
        thr = 0.6
        eff = pseudo_annotate(soft, labels, train, thr)
        for i in range(30):
            if train[i]:
                assert eff[i] == labels[i]
            elif soft[i].max() >= thr:
                assert eff[i] == soft[i].argmax()
            else:
                assert eff[i] == -1


class TestNaivePrototypes:
    def test_singleton_class(self):
        zp = np.array([[1.0, 2.0], [5.0, 5.0]])
        eff = np.array([0, -1])
        (p,) = naive_local_prototypes(zp, eff)
        assert p.class_id == 0 and p.hop == 0 and p.support == 1
        assert np.array_equal(p.vector, zp[0])

    def test_opposite_embeddings_cancel(self):
        zp = np.array([[1.0, -2.0], [-1.0, 2.0]])
        (p,) = naive_local_prototypes(zp, np.array([1, 1]))
        assert np.allclose(p.vector, 0.0)
        assert p.support == 2

    def test_matches_group_by_mean_oracle(self, rng):
        zp = rng.standard_normal((50, 6))
        eff = rng.integers(-1, 4, size=50)
        protos = {p.class_id: p for p in naive_local_prototypes(zp, eff)}
        for c in range(4):
            members = np.where(eff == c)[0]
            if len(members) == 0:
                assert c not in protos
                continue
            want = zp[members].mean(axis=0)
            assert np.max(np.abs(protos[c].vector - want)) <= 1e-12
            assert protos[c].support == len(members)


def star_graph(n_leaves: int) -> Graph:
    edges = [(0, i) for i in range(1, n_leaves + 1)]
    n = n_leaves + 1
    return Graph.build(n, 2, edges, np.zeros((n, 2)),
                       np.zeros(n, dtype=int), np.zeros(n, dtype=np.int8))


class TestTopologyPrototypes:
    def test_h0_equals_naive_exactly(self, rng):
        g = random_graph(rng, num_nodes=20, num_features=3)
        zp = rng.standard_normal((20, 5))
        eff = g.labels.copy()
        eff[rng.random(20) < 0.3] = -1
        scorer = init_scorer(5, 4, rng)
        for literal in (False, True):
            topo = [p for p in topology_aware_prototypes(g, zp, eff, scorer,
                                                         (0, 1), literal)
                    if p.hop == 0]
            naive = naive_local_prototypes(zp, eff)
            assert len(topo) == len(naive)
            for a, b in zip(topo, naive):
                assert (a.class_id, a.support) == (b.class_id, b.support)
                assert a.vector.tobytes() == b.vector.tobytes()

    def test_star_uniform_attention_center_anchor_mean(self, rng):
        g = star_graph(4)
        zp = rng.standard_normal((5, 3))
        scorer = zero_scorer(3, 2)
        eff = np.zeros(5, dtype=int)
        protos = topology_aware_prototypes(g, zp, eff, scorer, (1,))
        # with zero scorer every neighborhood softmax is uniform, so the
        # center anchor contributes the plain mean of all five embeddings;
        # leaf anchors see {leaf, center}
        inner = [zp.mean(axis=0)] + [(zp[i] + zp[0]) / 2.0 for i in range(1, 5)]
        want = np.mean(inner, axis=0)
        (p,) = protos
        assert np.allclose(p.vector, want, atol=1e-12)

    def test_literal_mode_matches_verbatim_brute_force(self, rng):
        g = random_graph(rng, num_nodes=30, num_features=3)
        zp = rng.standard_normal((30, 4))
        eff = g.labels.copy()
        eff[rng.random(30) < 0.2] = -1
        scorer = init_scorer(4, 3, rng)
        hops = (0, 1, 2)
        got = {(p.class_id, p.hop): p
               for p in topology_aware_prototypes(g, zp, eff, scorer, hops, True)}
        # brute force: enumerate anchors and neighborhoods, apply the inner
        # softmax-weighted mean divided by neighborhood size, then average
        for c in range(g.num_classes):
            anchors = [v for v in range(30) if eff[v] == c]
            if not anchors:
                assert all((c, h) not in got for h in hops)
                continue
            for h in hops:
                acc = np.zeros(4)
                for v in anchors:
                    nb = [u for u in khop_class_neighborhood(g, v, h, c, eff)]
                    scores = np.array([float(np.tanh(zp[u] @ scorer.w1) @ scorer.w2)
                                       for u in nb])
                    w = np.exp(scores)
                    w = w / w.sum()
                    inner = sum(w[j] * zp[u] for j, u in enumerate(nb)) / len(nb)
                    acc += inner
                want = acc / len(anchors)
                assert np.max(np.abs(got[(c, h)].vector - want)) <= 1e-10

    @pytest.mark.invariant("attention-weights-sum-one")
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_attention_weights_positive_sum_one(self, seed):
        rng = np.random.default_rng(seed)
        zp = rng.standard_normal((12, 4))
        scorer = init_scorer(4, 3, rng)
        scores = scorer.scores(zp)
        w = np.exp(scores - scores.max())
        w = w / w.sum()
        assert np.all(w > 0)
        assert abs(w.sum() - 1.0) <= 1e-9

    @pytest.mark.invariant("upload-count-and-finiteness")
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_upload_bound_and_finite(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, num_nodes=15)
        zp = rng.standard_normal((15, 4))
        eff = g.labels.copy()
        eff[rng.random(15) < 0.4] = -1
        protos = topology_aware_prototypes(g, zp, eff, init_scorer(4, 3, rng),
                                           (0, 1, 2))
        assert len(protos) <= g.num_classes * 3
        for p in protos:
            assert np.all(np.isfinite(p.vector))
            assert p.support >= 1

    @pytest.mark.invariant("label-permutation-equivariance")
    def test_label_permutation_only_renames_classes(self, rng):
        g = random_graph(rng, num_nodes=18)
        zp = rng.standard_normal((18, 4))
        eff = g.labels.copy()
        scorer = init_scorer(4, 3, rng)
        perm = np.array([2, 0, 1])
        eff_perm = np.where(eff >= 0, perm[eff], eff)
        a = {(p.class_id, p.hop): p for p in
             topology_aware_prototypes(g, zp, eff, scorer, (0, 1))}
        b = {(p.class_id, p.hop): p for p in
             topology_aware_prototypes(g, zp, eff_perm, scorer, (0, 1))}
        assert len(a) == len(b)
        for (c, h), p in a.items():
            q = b[(int(perm[c]), h)]
            assert p.vector.tobytes() == q.vector.tobytes()
            assert p.support == q.support


class TestNoise:
    def test_zero_fraction_unchanged(self, rng):
        protos = [Prototype(0, 0, rng.standard_normal(8), 3)]
        out = add_prototype_noise(protos, 0.0, 0.5, seed=1)
        assert np.array_equal(out[0].vector, protos[0].vector)

    def test_zero_sigma_unchanged(self, rng):
        protos = [Prototype(0, 0, rng.standard_normal(8), 3)]
        out = add_prototype_noise(protos, 1.0, 0.0, seed=1)
        assert np.array_equal(out[0].vector, protos[0].vector)

    def test_noise_std_matches_nominal(self):
        rng = np.random.default_rng(0)
        p = 32
        vec = rng.standard_normal(p)
        protos = [Prototype(0, 0, vec.copy(), 1) for _ in range(1000)]
        out = add_prototype_noise(protos, 1.0, 0.1, seed=2)
        deltas = np.stack([o.vector - vec for o in out])
        nominal = 0.1 * np.linalg.norm(vec) / np.sqrt(p)
        assert abs(deltas.std() - nominal) <= 0.1 * nominal

    def test_only_chosen_fraction_of_dims_touched(self, rng):
        vec = rng.standard_normal(20)
        (out,) = add_prototype_noise([Prototype(1, 2, vec.copy(), 4)], 0.25, 0.5, seed=3)
        changed = np.sum(out.vector != vec)
        assert changed <= int(np.ceil(0.25 * 20))
        assert out.class_id == 1 and out.hop == 2 and out.support == 4


class TestWireFormat:
    def test_round_trip_and_size(self, rng):
        protos = [Prototype(3, 1, rng.standard_normal(6), 9),
                  Prototype(0, 2, rng.standard_normal(6), 2)]
        blob = encode_prototypes(protos)
        assert len(blob) == prototype_bytes(2, 6) == 2 * (8 + 8 * 6)
        back = decode_prototypes(blob, 6)
        for a, b in zip(protos, back):
            assert (a.class_id, a.hop, a.support) == (b.class_id, b.hop, b.support)
            assert np.array_equal(a.vector, b.vector)


def test_plan_members_match_khop_operation(rng):
    g = random_graph(rng, num_nodes=16)
    eff = g.labels.copy()
    eff[rng.random(16) < 0.3] = -1
    ball_nodes, ball_dists = hop_balls(g, 2)
    plans = build_cell_plans(ball_nodes, ball_dists, eff, (0, 1, 2))
    for plan in plans:
        for i, v in enumerate(plan.anchors):
            seg = plan.members[plan.starts[i]:plan.starts[i] + plan.lengths[i]]
            want = khop_class_neighborhood(g, int(v), plan.hop, plan.class_id, eff)
            assert np.array_equal(seg, want)
