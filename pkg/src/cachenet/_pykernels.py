"""Vectorized numpy implementations of the per-path kernels.

Paths are padded to a common length; padding cells point at a phantom node
whose caching marginal is 0 and carry weight 0, so they never change a sum.
"""
import numpy as np


def _padded(table):
    cached = getattr(table, "_padded_cache", None)
    if cached is not None:
        return cached
    P = table.n_paths
    lengths = np.diff(table.offsets)
    L = int(lengths.max()) if P else 1
    nodes = np.full((P, L), table.n_nodes, dtype=np.int64)
    weights = np.zeros((P, L))
    pos = np.arange(L)
    mask = pos[None, :] < lengths[:, None]
    nodes[mask] = table.nodes
    weights[mask] = table.weights
    hop = pos[None, :] < (lengths[:, None] - 1)
    items = np.broadcast_to(table.item[:, None], (P, L))
    out = (nodes, weights, hop, items)
    object.__setattr__(table, "_padded_cache", out)
    return out


def _gather(table, xi):
    nodes, weights, hop, items = _padded(table)
    xpad = np.zeros((table.n_nodes + 1, table.n_items))
    xpad[:-1] = xi
    return xpad[nodes, items], nodes, weights, hop, items


def unit_costs(table, xi):
    """Per-path expected response cost ``sum_k w_k prod_{k'<=k} (1 - xi)``."""
    if table.n_paths == 0:
        return np.zeros(0)
    x, _, weights, _, _ = _gather(table, xi)
    return (weights * np.cumprod(1.0 - x, axis=1)).sum(axis=1)


def surrogate(table, rho, xi):
    if table.n_paths == 0:
        return 0.0
    x, _, weights, _, _ = _gather(table, xi)
    acc = (1.0 - rho)[:, None] + np.cumsum(x, axis=1)
    per_path = (weights * np.minimum(1.0, acc)).sum(axis=1)
    return float(np.dot(table.rate, per_path))


def sweep(table, rho, xi, mult):
    """Run one control message per path with multiplicity ``mult``.

    Returns ``(q, Z, hops)``: per-path routing measurements, per-(node, item)
    caching measurements and the number of forward hops of each message.
    """
    P = table.n_paths
    Z = np.zeros((table.n_nodes + 1, table.n_items))
    if P == 0:
        return np.zeros(0), Z[:-1], np.zeros(0, dtype=np.int64)
    x, nodes, weights, hop, items = _gather(table, xi)
    acc = (1.0 - rho)[:, None] + np.cumsum(x, axis=1)
    active = np.logical_and.accumulate(acc <= 1.0, axis=1)
    aw = weights * active
    upstream = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1]
    np.add.at(Z, (nodes, items), upstream * mult[:, None])
    q = -mult * aw.sum(axis=1)
    hops = (active & hop).sum(axis=1)
    return q, Z[:-1], hops
