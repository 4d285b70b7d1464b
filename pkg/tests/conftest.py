import numpy as np
import pytest

from protofed.graph import Graph


def random_graph(rng: np.random.Generator, num_nodes=12, num_classes=3,
                 num_features=5, edge_prob=0.25) -> Graph:
    """Small random graph with balanced-ish labels and a train/val/test split."""
    upper = np.triu(rng.random((num_nodes, num_nodes)) < edge_prob, k=1)
    src, dst = np.nonzero(upper)
    edges = np.stack([src, dst], axis=1)
    labels = rng.integers(0, num_classes, size=num_nodes)
    features = rng.standard_normal((num_nodes, num_features))
    masks = rng.integers(0, 3, size=num_nodes).astype(np.int8)
    masks[rng.integers(num_nodes)] = 0  # at least one train node
    return Graph.build(num_nodes, num_classes, edges, features, labels, masks)


def central_difference(fn, arrays: dict, step=1e-5) -> dict:
    """Finite-difference gradient of scalar fn() w.r.t. every entry of every
    array in ``arrays`` (mutated in place around each evaluation)."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn()
            flat[i] = orig - step
            down = fn()
            flat[i] = orig
            gf[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_rel_err(a: np.ndarray, b: np.ndarray, floor=1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
