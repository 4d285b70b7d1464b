"""Sweep helper: compare methods on the synthetic acceptance datasets.

Usage: python3 scripts/tune_comparison.py [quick|full]
"""

import sys
import time

import numpy as np

from protofed.config import FederationConfig
from protofed.engine import run_rounds, setup_experiment
from protofed.generators import generate_homophily, generate_sbm


def run(graph, method, seed, **over):
    cfg = FederationConfig(method=method, partition="balanced",
                           partition_seed=seed, init_seed=seed + 1,
                           sampling_seed=seed + 2, noise_seed=seed + 3, **over)
    state = setup_experiment(cfg, graph)
    run_rounds(state)
    return state


def compare(graph, seeds, methods=("fedpg", "fedproto-naive"), **over):
    results = {m: [] for m in methods}
    t0 = time.perf_counter()
    for seed in seeds:
        for m in methods:
            state = run(graph, m, 100 + seed, **over)
            results[m].append(state.round_metrics[-1].global_accuracy)
    dt = time.perf_counter() - t0
    means = {m: float(np.mean(v)) for m, v in results.items()}
    return means, results, dt


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "quick"
    seeds = range(5) if mode == "full" else range(2)

    base = dict(num_clients=10, rounds=20, local_epochs=3, server_epochs=60,
                client_lr=0.3, server_lr=0.02, proto_loss_weight=0.5,
                fusion_weight=0.5, similarity_threshold=0.5, margin_cap=0.5,
                hop_sample_ratio=0.5, confidence_threshold=0.8)

    g = generate_homophily(1500, 6, 0.7, 6.0, 500, seed=77,
                           mean_scale=0.35, noise_scale=1.0, train_frac=0.1,
                           val_frac=0.2)
    print(f"homophily graph: n={g.num_nodes} m={g.num_edges}")
    for mu in (0.0, 0.25, 0.5, 1.0):
        means, _, dt = compare(g, seeds, **{**base, "proto_loss_weight": mu})
        gap = means["fedpg"] - means["fedproto-naive"]
        print(f"mu={mu:4}: fedpg={means['fedpg']:.4f} "
              f"naive={means['fedproto-naive']:.4f} gap={100*gap:+.2f}pts "
              f"({dt:.1f}s)")


if __name__ == "__main__":
    main()
