"""Eviction policies with path replication, and fixed or adaptive routing baselines."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import kernels
from .netmodel import ProblemInstance, RequestEvent
from .offline import route_rns_indices
from .online import sample_path
from .projection import project_simplex

POLICIES = ("lru", "lfu", "fifo", "rr")


class EvictionCache:
    """A cache of ``capacity`` items managed by an eviction policy.

    ``lru`` evicts the least recently used item, ``lfu`` the item with the
    fewest lookups seen by this cache (counters are never decayed, ties go to
    the oldest insertion), ``fifo`` the oldest insertion, ``rr`` a uniformly
    random item.
    """

    def __init__(self, policy, capacity, rng=None):
        policy = policy.lower()
        if policy not in POLICIES:
            raise ValueError(f"unknown eviction policy {policy!r}")
        self.policy = policy
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._items: "OrderedDict[int, None]" = OrderedDict()
        self.freq = {}

    def __contains__(self, i):
        return i in self._items

    def __len__(self):
        return len(self._items)

    @property
    def contents(self):
        return frozenset(self._items)

    def lookup(self, i) -> bool:
        """Check for ``i``, updating recency or frequency metadata."""
        if self.policy == "lfu":
            self.freq[i] = self.freq.get(i, 0) + 1
        hit = i in self._items
        if hit and self.policy == "lru":
            self._items.move_to_end(i)
        return hit

    def insert(self, i):
        """Store ``i``; returns the evicted item, if any."""
        if self.capacity == 0 or i in self._items:
            return None
        evicted = None
        if len(self._items) >= self.capacity:
            evicted = self._victim()
            del self._items[evicted]
        self._items[i] = None
        return evicted

    def _victim(self):
        if self.policy in ("lru", "fifo"):
            return next(iter(self._items))
        if self.policy == "lfu":
            return min(self._items, key=lambda j: self.freq.get(j, 0))  # first minimum = oldest
        keys = list(self._items)
        return keys[int(self.rng.integers(len(keys)))]


def serve_request(event: RequestEvent, caches, p: ProblemInstance, c=None):
    """Serve one request over its chosen path with path replication.

    The request walks the path until a node caches the item (the designated
    server at the end always has it); every node before that one then stores
    the item.

    Returns
    -------
    (float, list)
        Response cost and the ``(node, inserted item, evicted item)`` mutations.
    """
    if c is None:
        c = p.classes.index(tuple(event.klass))
    i, _s = p.classes[c]
    path = p.path_sets[c][event.path_choice]
    hit = len(path) - 1
    for k, v in enumerate(path[:-1]):
        if caches[v].lookup(i):
            hit = k
            break
    cost = 0.0
    for k in range(hit):
        cost += p.edges[(path[k + 1], path[k])]
    mutations = []
    for k in range(hit):
        v = path[k]
        if caches[v].capacity and i not in caches[v]:
            mutations.append((v, i, caches[v].insert(i)))
    return cost, mutations


def route_rns(p: ProblemInstance) -> np.ndarray:
    """Flat routing vector with all mass on each class's least-weight path."""
    rho = np.zeros(p.total_paths)
    for c, r in enumerate(route_rns_indices(p)):
        rho[p.class_offsets[c] + r] = 1.0
    return rho


def route_uniform(p: ProblemInstance) -> np.ndarray:
    sizes = np.diff(p.class_offsets)
    return np.repeat(1.0 / np.maximum(sizes, 1), sizes)


class DynamicRouter:
    """Per-slot cost averages drive a projected descent step on the routing.

    Parameters
    ----------
    eta : float, optional
        Step size; defaults to ``0.01 / mean(lambda)``.
    """

    def __init__(self, p: ProblemInstance, eta=None, rho=None):
        self.p = p
        mean_rate = float(np.mean(p.rates)) if p.n_classes else 1.0
        self.eta = 0.01 / mean_rate if eta is None else float(eta)
        self.rho = route_uniform(p) if rho is None else np.asarray(rho, dtype=np.float64).copy()
        self.cost_sum = np.zeros(p.total_paths)
        self.count = np.zeros(p.total_paths)

    def observe(self, j, cost):
        self.cost_sum[j] += cost
        self.count[j] += 1

    def averages(self):
        return np.divide(self.cost_sum, self.count, out=np.zeros_like(self.cost_sum),
                         where=self.count > 0)

    def reset(self):
        self.cost_sum[:] = 0.0
        self.count[:] = 0.0


def dynamic_route_update(router: DynamicRouter, averages=None) -> DynamicRouter:
    """``rho_c <- Proj_simplex(rho_c - eta * avg_c)`` per class; then reset the slot averages.

    Paths without samples in the slot get no adjustment.
    """
    p = router.p
    avg = router.averages() if averages is None else np.asarray(averages, dtype=np.float64)
    new = router.rho.copy()
    for c in range(p.n_classes):
        sl = p.class_slice(c)
        new[sl] = project_simplex(router.rho[sl] - router.eta * avg[sl])
    router.rho = new
    router.reset()
    return router


class BaselineSimulator:
    """Continuous-time simulation of an eviction policy combined with a routing scheme.

    Parameters
    ----------
    routing : {"s", "u", "d"}
        Least-weight path, uniform over the path set, or dynamic routing
        updated every ``T`` time units.
    """

    def __init__(self, p: ProblemInstance, policy="lru", routing="s", seed=0, T=50.0, eta=None):
        self.p = p
        self.policy = policy
        self.routing = routing
        self.T = float(T)
        self.caches = [EvictionCache(policy, p.capacity[v], np.random.default_rng([seed, 12, v]))
                       for v in range(p.n_nodes)]
        self.router = None
        if routing == "s":
            self.rho = route_rns(p)
        elif routing == "u":
            self.rho = route_uniform(p)
        elif routing == "d":
            self.router = DynamicRouter(p, eta=eta)
            self.rho = self.router.rho
        else:
            raise ValueError(f"unknown routing {routing!r}")
        self._arr = np.random.default_rng([seed, 10])
        self._route = np.random.default_rng([seed, 11])
        self._rates = np.asarray(p.rates, dtype=np.float64)
        self._total = float(self._rates.sum())
        self._cdf = np.cumsum(self._rates) / self._total if self._total > 0 else None
        self.time = 0.0
        self._next = self._draw_gap()
        self._slot_end = self.T
        self.served = 0
        self.total_cost = 0.0
        self.events = []
        self.keep_events = False

    def _draw_gap(self):
        return self._arr.exponential(1.0 / self._total) if self._total > 0 else np.inf

    def _one_request(self, t):
        p = self.p
        c = int(np.searchsorted(self._cdf, self._arr.random(), side="right"))
        c = min(c, p.n_classes - 1)
        j = int(sample_path(self.rho[p.class_slice(c)], self._route))
        ev = RequestEvent(p.classes[c], t, j)
        cost, _ = serve_request(ev, self.caches, p, c)
        if self.router is not None:
            self.router.observe(p.class_offsets[c] + j, cost)
        self.served += 1
        self.total_cost += cost
        if self.keep_events:
            self.events.append(ev)

    def advance(self, t):
        """Process all arrivals and slot-boundary routing updates up to time ``t``."""
        while True:
            nxt = min(self._next, self._slot_end)
            if nxt > t:
                break
            if self._slot_end <= self._next:
                if self.router is not None:
                    dynamic_route_update(self.router)
                    self.rho = self.router.rho
                self._slot_end += self.T
            else:
                self._one_request(self._next)
                self._next += self._draw_gap()
        self.time = t

    def snapshot(self):
        return self.rho, tuple(c.contents for c in self.caches)

    def snapshot_cost(self):
        rho, caches = self.snapshot()
        xi = np.zeros((self.p.n_nodes, self.p.n_items))
        for v, items in enumerate(caches):
            xi[v, list(items)] = 1.0
        return float(np.dot(self.p.table.rate * rho, kernels.unit_costs(self.p.table, xi)))

    @property
    def messages(self):
        return 0
