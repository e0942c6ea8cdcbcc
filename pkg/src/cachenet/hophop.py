"""Hop-by-hop routing over per-item DAGs.

Every node forwards a request for item ``i`` to one of its out-neighbors in a
DAG ``G^(i)`` whose sinks are exactly the designated servers of ``i``. The
routing state holds one probability per DAG edge; the probabilities leaving a
node sum to 1.

Costs are written as a sum of *terms*. A term of class ``(i, s)`` is a DAG
path ``s = a_0 -> a_1 -> ... -> a_L`` and stands for the response crossing the
last edge ``(a_L, a_{L-1})``. Its expected share of the cost is
``w_{a_L a_{L-1}} * prod_k rho_{a_k a_{k+1}} * prod_{k < L} (1 - xi_{a_k i})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np

from .netmodel import FractionalState, ProblemInstance
from .objective import SubgradientPair
from .online import (ARRIVAL_TAG, CACHE_TAG, SimTrace, SlotConfig, SlotRecord,
                     _rng, sample_cache, smooth)
from .projection import project_capped_simplex, project_simplex

MAX_TERMS = 10 ** 6


class PathCountExceededError(RuntimeError):
    """The DAGs contain too many paths for exact evaluation."""


@dataclass(frozen=True)
class ItemDag:
    """DAG of item ``item``: an edge leads strictly closer to a designated server."""

    item: int
    edges: Tuple[Tuple[int, int], ...]
    dist: Tuple[float, ...]

    def out_neighbors(self, u):
        return [v for (a, v) in self.edges if a == u]

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.dist)))
        g.add_edges_from(self.edges)
        return g

    def reachable(self, s) -> nx.DiGraph:
        """Subgraph ``G^(i,s)`` reachable from ``s``."""
        g = self.graph()
        return g.subgraph(nx.descendants(g, s) | {s}).copy()

    def paths_from(self, s):
        """All DAG paths from ``s`` to a sink."""
        g = self.graph()
        sinks = [v for v in g if g.out_degree(v) == 0]
        out = []
        for t in sinks:
            if t != s:
                out.extend(tuple(q) for q in nx.all_simple_paths(g, s, t))
        return sorted(out)


def build_dags(p: ProblemInstance) -> Dict[int, ItemDag]:
    """Per-item DAGs from response-weight distances to the designated servers.

    A request forwarded over ``(u, v)`` is answered over ``(v, u)``, so the
    distance of ``u`` is the least total ``w_vu`` of a request path from ``u``
    to a server. Edge ``(u, v)`` is kept iff ``dist(v) < dist(u)``.

    Raises
    ------
    ValueError
        If a node cannot reach a server of some item, or if a non-server node
        ends up without an out-edge.
    """
    g = nx.DiGraph()
    g.add_nodes_from(range(p.n_nodes))
    # reversed request graph: arc v -> u carries the response weight w_vu
    for (u, v) in p.edges:
        g.add_edge(v, u, weight=p.edges.get((v, u), p.edges[(u, v)]))
    dags = {}
    for i in range(p.n_items):
        src = "_servers"
        h = g.copy()
        for sv in p.servers[i]:
            h.add_edge(src, sv, weight=0.0)
        _pred, dist = nx.bellman_ford_predecessor_and_distance(h, src)
        d = []
        for v in range(p.n_nodes):
            if v not in dist:
                raise ValueError(f"node {v} cannot reach a designated server of item {i}")
            d.append(float(dist[v]))
        edges = tuple(sorted((u, v) for (u, v) in p.edges if d[v] < d[u]))
        tails = {u for u, _ in edges}
        for v in range(p.n_nodes):
            if v not in p.servers[i] and v not in tails:
                raise ValueError(f"node {v} has no neighbor closer to a server of item {i}")
        dags[i] = ItemDag(i, edges, tuple(d))
    return dags


def export_dags(dags: Dict[int, ItemDag], p: ProblemInstance, out=None) -> str:
    """Edge-list dump: one ``item u v w`` line per DAG edge."""
    lines = ["# item u v w_uv"]
    for i in sorted(dags):
        for (u, v) in dags[i].edges:
            lines.append(f"{i} {u} {v} {p.edges[(u, v)]!r}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w") as fh:
                fh.write(text)
    return text


class HopByHopInstance:
    """A problem instance together with its DAGs and the enumerated cost terms.

    Routing variables are flat over all ``(item, u, v)`` DAG edges;
    ``groups`` lists, for every ``(item, u)`` with out-edges, the slice of its
    variables.
    """

    def __init__(self, p: ProblemInstance, dags=None, max_terms=MAX_TERMS):
        self.p = p
        self.dags = build_dags(p) if dags is None else dags
        self.edge_index: Dict[Tuple[int, int, int], int] = {}
        self.edge_list: List[Tuple[int, int, int]] = []
        self.groups: Dict[Tuple[int, int], slice] = {}
        for i in range(p.n_items):
            by_tail: Dict[int, List[int]] = {}
            for (u, v) in self.dags[i].edges:
                by_tail.setdefault(u, []).append(v)
            for u in sorted(by_tail):
                start = len(self.edge_list)
                for v in sorted(by_tail[u]):
                    self.edge_index[(i, u, v)] = len(self.edge_list)
                    self.edge_list.append((i, u, v))
                self.groups[(i, u)] = slice(start, len(self.edge_list))
        self.n_edges = len(self.edge_list)
        self._enumerate_terms(max_terms)

    def _enumerate_terms(self, max_terms):
        p = self.p
        t_cls, t_w, t_edges, t_tails = [], [], [], []
        count = 0
        for c, (i, s) in enumerate(p.classes):
            out = {}
            for (u, v) in self.dags[i].edges:
                out.setdefault(u, []).append(v)
            stack = [(s, (), ())]
            while stack:
                u, edges, tails = stack.pop()
                for v in sorted(out.get(u, ()), reverse=True):
                    e = self.edge_index[(i, u, v)]
                    ne, nt = edges + (e,), tails + (u,)
                    t_cls.append(c)
                    t_w.append(p.edges[(v, u)])
                    t_edges.append(ne)
                    t_tails.append(nt)
                    count += 1
                    if count > max_terms:
                        raise PathCountExceededError(
                            f"more than {max_terms} DAG paths; use source routing instead")
                    stack.append((v, ne, nt))
        n = len(t_cls)
        L = max((len(e) for e in t_edges), default=1)
        self.term_class = np.asarray(t_cls, dtype=np.int64)
        self.term_weight = np.asarray(t_w, dtype=np.float64)
        self.term_item = np.asarray([p.classes[c][0] for c in t_cls], dtype=np.int64)
        self.term_len = np.asarray([len(e) for e in t_edges], dtype=np.int64)
        # padding points at a phantom edge (rho = 1) and a phantom node (xi = 0)
        self.term_edges = np.full((n, L), self.n_edges, dtype=np.int64)
        self.term_tails = np.full((n, L), p.n_nodes, dtype=np.int64)
        for r, (e, tl) in enumerate(zip(t_edges, t_tails)):
            self.term_edges[r, :len(e)] = e
            self.term_tails[r, :len(tl)] = tl
        self.term_rate = np.asarray([p.rates[c] for c in t_cls], dtype=np.float64)

    @property
    def n_terms(self):
        return len(self.term_class)

    def _gather(self, rho, xi):
        rpad = np.append(rho, 1.0)
        xpad = np.zeros((self.p.n_nodes + 1, self.p.n_items))
        xpad[:-1] = xi
        items = self.term_item[:, None]
        return rpad[self.term_edges], xpad[self.term_tails, items]

    def uniform_state(self) -> FractionalState:
        rho = np.zeros(self.n_edges)
        for sl in self.groups.values():
            rho[sl] = 1.0 / (sl.stop - sl.start)
        return FractionalState(rho, FractionalState.uniform(self.p).xi)

    def project(self, state: FractionalState) -> FractionalState:
        rho = state.rho.copy()
        for sl in self.groups.values():
            rho[sl] = project_simplex(rho[sl])
        xi = np.vstack([project_capped_simplex(state.xi[v], self.p.capacity[v])
                        for v in range(self.p.n_nodes)])
        return FractionalState(rho, xi)

    def feasible(self, state: FractionalState, tol=1e-9) -> bool:
        if state.rho.shape != (self.n_edges,):
            return False
        if state.rho.size and (state.rho.min() < -tol or state.rho.max() > 1 + tol):
            return False
        for sl in self.groups.values():
            if abs(state.rho[sl].sum() - 1.0) > tol:
                return False
        xi = state.xi
        cap = np.asarray(self.p.capacity, dtype=np.float64)
        return bool(xi.min() >= -tol and xi.max() <= 1 + tol
                    and np.all(np.abs(xi.sum(axis=1) - cap) <= tol))

    def from_integral(self, choice: Dict[Tuple[int, int], int], caching) -> FractionalState:
        """State from a next-hop map ``(item, u) -> v`` and per-node item sets."""
        rho = np.zeros(self.n_edges)
        for (i, u), v in choice.items():
            rho[self.edge_index[(i, u, v)]] = 1.0
        xi = np.zeros((self.p.n_nodes, self.p.n_items))
        for v, items in enumerate(caching):
            xi[v, list(items)] = 1.0
        return FractionalState(rho, xi)

    def to_sr_state(self, state: FractionalState) -> FractionalState:
        """Source-routing marginals ``rho_p = prod_(u,v in p) rho_uv``.

        Every source-routing path must be a DAG path ending at a sink.
        """
        p = self.p
        rho = np.zeros(p.total_paths)
        for c, ((i, _s), paths) in enumerate(zip(p.classes, p.path_sets)):
            for j, path in enumerate(paths):
                prod = 1.0
                for a, b in zip(path[:-1], path[1:]):
                    prod *= state.rho[self.edge_index[(i, a, b)]]
                rho[p.class_offsets[c] + j] = prod
        return FractionalState(rho, state.xi.copy())


def _model(obj):
    return obj if isinstance(obj, HopByHopInstance) else HopByHopInstance(obj)


def cost_hh(state: FractionalState, model) -> float:
    m = _model(model)
    if m.n_terms == 0:
        return 0.0
    r, x = m._gather(state.rho, state.xi)
    return float(np.dot(m.term_rate * m.term_weight, np.prod(r * (1.0 - x), axis=1)))


def c0_hh(model) -> float:
    m = _model(model)
    return float(np.dot(m.term_rate, m.term_weight))


def gain_hh(state: FractionalState, model) -> float:
    m = _model(model)
    return c0_hh(m) - cost_hh(state, m)


def _term_acc(m, state):
    r, x = m._gather(state.rho, state.xi)
    return ((1.0 - r) + x).sum(axis=1)


def surrogate_L_hh(state: FractionalState, model) -> float:
    m = _model(model)
    if m.n_terms == 0:
        return 0.0
    return float(np.dot(m.term_rate * m.term_weight, np.minimum(1.0, _term_acc(m, state))))


def _term_subgradient(m, state, term_mult):
    active = _term_acc(m, state) <= 1.0
    val = np.where(active, term_mult * m.term_weight, 0.0)
    q = np.zeros(m.n_edges + 1)
    Z = np.zeros((m.p.n_nodes + 1, m.p.n_items))
    L = m.term_edges.shape[1]
    np.add.at(q, m.term_edges, -np.repeat(val[:, None], L, axis=1))
    np.add.at(Z, (m.term_tails, np.repeat(m.term_item[:, None], L, axis=1)),
              np.repeat(val[:, None], L, axis=1))
    return SubgradientPair(q[:-1], Z[:-1]), active


def exact_subgradient_L_hh(state: FractionalState, model) -> SubgradientPair:
    """Upper partial derivatives of the hop-by-hop surrogate (weak-inequality indicators)."""
    m = _model(model)
    g, _ = _term_subgradient(m, state, m.term_rate)
    return g


@dataclass
class FloodRecord:
    t_node: Dict[int, float] = field(default_factory=dict)
    t_edge: Dict[int, float] = field(default_factory=dict)
    hops: int = 0


def hh_control_sweep(model, c: int, state: FractionalState) -> FloodRecord:
    """Flood control messages of class ``c`` over its DAG and merge the responses.

    A copy holding counter ``A`` at node ``u`` is forwarded to out-neighbor
    ``v`` iff ``A + 1 - rho_uv + xi_ui <= 1``. A node waits for the responses
    of all copies it forwarded, adds ``w_vu`` to each, sums them and sends the
    result back. Every node sniffs the merged value it sends upstream, every
    edge the (negated) response that crossed it.
    """
    m = _model(model)
    p = m.p
    i, s = p.classes[c]
    out: Dict[int, List[int]] = {}
    for (u, v) in m.dags[i].edges:
        out.setdefault(u, []).append(v)
    rec = FloodRecord()

    def visit(u, acc):
        merged = 0.0
        for v in sorted(out.get(u, ())):
            e = m.edge_index[(i, u, v)]
            nxt = acc + 1.0 - state.rho[e] + state.xi[u, i]
            if nxt > 1.0:
                continue
            rec.hops += 1
            resp = visit(v, nxt) + p.edges[(v, u)]
            rec.t_edge[e] = rec.t_edge.get(e, 0.0) - resp
            merged += resp
        if merged or u in rec.t_node:
            rec.t_node[u] = rec.t_node.get(u, 0.0) + merged
        return merged

    visit(s, 0.0)
    return rec


def round_hh_routing(state: FractionalState, model, order=None):
    """Make routing deterministic node by node without lowering the gain.

    Parameters
    ----------
    order : sequence of nodes, optional
        Node visiting order; defaults to a topological order of each item's DAG.

    Returns
    -------
    (FractionalState, dict, list)
        The rounded state, the next-hop map ``(item, u) -> v`` and the gain
        after every step.
    """
    m = _model(model)
    s = state.copy()
    choice = {}
    gains = [gain_hh(s, m)]
    for i in range(m.p.n_items):
        nodes = order if order is not None else list(
            nx.lexicographical_topological_sort(m.dags[i].graph()))
        for u in nodes:
            sl = m.groups.get((i, u))
            if sl is None:
                continue
            best = None
            for k in range(sl.stop - sl.start):
                s.rho[sl] = 0.0
                s.rho[sl.start + k] = 1.0
                val = gain_hh(s, m)
                if best is None or val > best[0]:
                    best = (val, k)
            s.rho[sl] = 0.0
            s.rho[sl.start + best[1]] = 1.0
            choice[(i, u)] = m.edge_list[sl.start + best[1]][2]
            gains.append(best[0])
    return s, choice, gains


def simulate_hh(p, cfg: SlotConfig, keep_states=False) -> SimTrace:
    """Projected gradient ascent with hop-by-hop routing.

    Smoothing and cache sampling are the same as for source routing; the
    estimates come from one control flood per request.
    """
    m = _model(p)
    inst = m.p
    state = m.uniform_state() if cfg.init == "uniform" else cfg.init.copy()
    history, weights, records, states, caches_log = [], [], [], [], []
    c0 = c0_hh(m)
    for k in range(1, cfg.slots + 1):
        history.append(state)
        weights.append(cfg.gamma0 / math.sqrt(k))
        sm = smooth(history, weights, k)
        caches = tuple(sample_cache(sm.xi[v], inst.capacity[v], _rng(cfg.seed, CACHE_TAG, k, v))
                       for v in range(inst.n_nodes))
        counts = _rng(cfg.seed, ARRIVAL_TAG, k).poisson(np.asarray(inst.rates) * cfg.T) \
            if inst.n_classes else np.zeros(0, int)
        g, active = _term_subgradient(m, state, counts[m.term_class].astype(np.float64))
        msgs = 2 * int(np.dot(counts[m.term_class], active))
        grads = g.scaled(1.0 / cfg.T)
        state = m.project(FractionalState(state.rho + weights[-1] * grads.q,
                                          state.xi + weights[-1] * grads.Z))
        cost_s = cost_hh(sm, m)
        xi_x = np.zeros_like(sm.xi)
        for v, items in enumerate(caches):
            xi_x[v, list(items)] = 1.0
        cost_x = cost_hh(FractionalState(sm.rho, xi_x), m)
        records.append(SlotRecord(k, k * cfg.T, c0 - cost_s, cost_s, cost_x, msgs))
        if keep_states:
            states.append(sm)
            caches_log.append(caches)
    return SimTrace(tuple(records), tuple(states), tuple(caches_log), c0)
