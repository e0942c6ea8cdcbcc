import numpy as np
import pytest

from cachenet.netmodel import ProblemInstance
from cachenet.offline import build_counterexample
from cachenet.topogen import build_instance


def line_instance(weights=(2.0, 3.0), capacity=(0, 1, 0), n_items=2, rate=1.0):
    """Line 0 - 1 - ... - n-1 with the server of every item at the far end and
    one request class per item from node 0."""
    n = len(weights) + 1
    edges = {}
    for k, w in enumerate(weights):
        edges[(k, k + 1)] = w
        edges[(k + 1, k)] = w
    path = tuple(range(n))
    return ProblemInstance(
        n_nodes=n, n_items=n_items, edges=edges, capacity=list(capacity),
        servers=[frozenset({n - 1})] * n_items,
        classes=[(i, 0) for i in range(n_items)], rates=[rate] * n_items,
        path_sets=[(path,)] * n_items, name="line",
    )


def small_instance(seed, n_nodes=6, n_items=3, n_classes=4, n_sources=3, n_paths=3):
    """Random instance small enough for exhaustive enumeration (c_v = 1)."""
    return build_instance("erdos-renyi", seed=seed, params={"n": n_nodes, "p": 0.5},
                          n_items=n_items, n_classes=n_classes, n_sources=n_sources,
                          capacity=1, n_paths=n_paths)


@pytest.fixture
def diamond():
    return build_counterexample(10)


@pytest.fixture
def line():
    return line_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
