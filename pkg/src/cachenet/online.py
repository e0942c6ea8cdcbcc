"""Slotted simulation of distributed projected gradient ascent.

Each slot ``k`` the network

1. smooths past states into ``(rho_bar, xi_bar)``,
2. samples cache contents from ``xi_bar`` and serves Poisson arrivals over
   paths drawn from ``rho_bar``,
3. sends control messages at the raw state ``(rho_k, xi_k)``; the sniffed
   weights give unbiased estimates of a subgradient of the surrogate,
4. takes a projected step of size ``gamma0 / sqrt(k)``.

Within a slot the state is static, so every arrival of a class produces the
same control measurement on a given path; the simulator therefore draws
per-class arrival counts and weights the per-path sweep by them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .netmodel import FractionalState, ProblemInstance
from .objective import SubgradientPair, c0_sr, cost_sr
from .offline import project_state, route_rns_indices
from .projection import project_capped_simplex, project_simplex

CTRL_TAG, CACHE_TAG, ARRIVAL_TAG = 3, 1, 2


@dataclass
class SlotConfig:
    """Simulation parameters.

    Parameters
    ----------
    T : float
        Slot duration.
    gamma0 : float
        Base step size; slot ``k`` uses ``gamma0 / sqrt(k)``.
    variant : {"full", "single"}
        ``"full"`` sends a control message over every path of the class per
        request; ``"single"`` over one path drawn uniformly from the support
        of ``rho`` and scales the measurement by the support size.
    routing : {"joint", "fixed"}
        ``"fixed"`` keeps the initial routing and adapts caching only.
    """

    T: float = 50.0
    gamma0: float = 1.0
    seed: int = 0
    variant: str = "full"
    slots: int = 300
    init: str = "uniform"
    routing: str = "joint"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("slot duration T must be positive")
        if self.slots < 1:
            raise ValueError("slots must be at least 1")
        if self.variant not in ("full", "single"):
            raise ValueError(f"unknown control variant {self.variant!r}")
        if self.routing not in ("joint", "fixed"):
            raise ValueError(f"unknown routing mode {self.routing!r}")


@dataclass
class MeasurementBank:
    """Sniffed control-message quantities of one slot, kept as running sums.

    ``z_sum[v, i]`` adds up the upstream weights ``t_vi`` and ``q_sum[j]`` the
    negated accumulated weights of path ``j``; ``ctrl_msgs`` counts message
    transmissions (one per traversed edge in each direction).
    """

    z_sum: np.ndarray
    q_sum: np.ndarray
    ctrl_msgs: int = 0

    @classmethod
    def empty(cls, p: ProblemInstance):
        return cls(np.zeros((p.n_nodes, p.n_items)), np.zeros(p.total_paths), 0)

    def add(self, q, Z, msgs):
        self.q_sum += q
        self.z_sum += Z
        self.ctrl_msgs += int(msgs)

    def clear(self):
        self.z_sum[:] = 0.0
        self.q_sum[:] = 0.0
        self.ctrl_msgs = 0


@dataclass
class SweepRecord:
    """Result of one control message on one path."""

    visited: List[int]
    counters: List[float]
    t_node: dict
    t_path: float
    hops: int


def control_sweep(p: ProblemInstance, c: int, j: int, state: FractionalState) -> SweepRecord:
    """Send one control message along path ``j`` of class ``c``.

    The counter starts at ``1 - rho_p`` and each node adds its ``xi_vi``; a
    node forwards while the counter is at most 1. The response returns along
    the traversed prefix adding the reverse-edge weights; each visited node
    records the weight accumulated when the response passes it, and the
    source records the negated total.
    """
    i, _s = p.classes[c]
    path = p.path_sets[c][j]
    rho = state.rho[p.class_offsets[c] + j]
    acc = 1.0 - rho
    visited, counters = [], []
    for k, v in enumerate(path):
        acc += state.xi[v, i]
        counters.append(acc)
        if acc > 1.0:
            break
        visited.append(v)
    hops = len(visited) - (1 if len(visited) == len(path) else 0)
    hops = max(hops, 0)
    t_node, up = {}, 0.0
    for k in range(len(visited) - 1, -1, -1):
        if k + 1 < len(path):
            up += p.edges[(path[k + 1], path[k])]
        t_node[visited[k]] = t_node.get(visited[k], 0.0) + up
    t_path = -up if visited else 0.0
    return SweepRecord(visited, counters, t_node, t_path, hops)


def estimate_subgradients(bank: MeasurementBank, T: float) -> SubgradientPair:
    """Empirical subgradient: sniffed sums divided by the slot length."""
    return SubgradientPair(bank.q_sum / T, bank.z_sum / T)


def adapt_and_project(state: FractionalState, grads: SubgradientPair, gamma: float,
                      p: ProblemInstance, fixed_routing=False) -> FractionalState:
    """Ascent step followed by projection onto the relaxed feasible set."""
    rho = state.rho if fixed_routing else state.rho + gamma * grads.q
    nxt = project_state(FractionalState(rho, state.xi + gamma * grads.Z), p)
    if fixed_routing:
        nxt.rho = state.rho.copy()
    return nxt


def window_bounds(k):
    """1-based inclusive slot window ``[max(1, floor(k/2)), k]`` used for smoothing."""
    return max(1, k // 2), k


def smooth(history, weights, k=None):
    """Weighted average of past states over the sliding window.

    Parameters
    ----------
    history : sequence of FractionalState
        ``history[l - 1]`` is the state of slot ``l``.
    weights : sequence of float
        ``gamma_l`` for every slot.
    k : int, optional
        Current slot; defaults to ``len(history)``.
    """
    k = len(history) if k is None else k
    lo, hi = window_bounds(k)
    w = np.asarray(weights[lo - 1:hi], dtype=np.float64)
    w = w / w.sum()
    rho = np.zeros_like(history[0].rho)
    xi = np.zeros_like(history[0].xi)
    for wl, s in zip(w, history[lo - 1:hi]):
        rho += wl * s.rho
        xi += wl * s.xi
    return FractionalState(rho, xi)


def sample_cache(xi_v, c_v, rng, tol=1e-8):
    """Draw exactly ``c_v`` distinct items with inclusion probabilities ``xi_v``.

    Items are laid end to end as intervals of length ``xi_vi`` in a box of
    ``c_v`` unit rows; one uniform cut ``z`` selects, in every row ``l``, the
    item whose interval contains ``l + z``.

    Raises
    ------
    ValueError
        If ``xi_v`` is not in the capped simplex.
    """
    xi_v = np.asarray(xi_v, dtype=np.float64)
    if c_v == 0:
        if xi_v.size and np.abs(xi_v).max() > tol:
            raise ValueError("nonzero marginals at a node without cache")
        return frozenset()
    if xi_v.min() < -tol or xi_v.max() > 1 + tol or abs(xi_v.sum() - c_v) > tol * max(1, c_v) * 10:
        raise ValueError("caching marginals are not in the capped simplex")
    x = np.clip(xi_v, 0.0, 1.0)
    x = x * (c_v / x.sum())
    ends = np.cumsum(x)
    z = rng.random()
    points = np.arange(c_v) + z
    idx = np.searchsorted(ends, points, side="right")
    chosen = set()
    for t in idx:
        t = int(min(t, len(x) - 1))
        while t in chosen or x[t] == 0.0:
            # only reachable through round-off at the box end
            t = (t - 1) % len(x)
        chosen.add(t)
    return frozenset(chosen)


def sample_path(rho_c, rng, size=None):
    """Categorical draw of a path index from ``rho_c`` (vectorized if ``size``)."""
    cdf = np.cumsum(np.clip(rho_c, 0.0, None))
    cdf /= cdf[-1]
    u = rng.random(size)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def convergence_bound(p: ProblemInstance, k: int, T: float, gamma0=1.0) -> float:
    """Upper bound on the surrogate suboptimality of the smoothed state at slot ``k``.

    ``(D^2 + M^2 sum gamma^2) / (2 sum gamma)`` over the smoothing window with
    ``D = sqrt(2 |V| max c_v + 2 |R|)`` and
    ``M = W |V| Lambda sqrt((|V| |C| Pbar^2 + |R| P) (1 + 1 / (Lambda T)))``,
    where ``W`` is the largest weight, ``Lambda`` the total rate, ``Pbar`` the
    largest path-set size and ``P`` the total number of paths.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    V, C, R = p.n_nodes, p.n_items, p.n_classes
    D2 = 2.0 * V * max(p.capacity) + 2.0 * R
    W = max(p.edges.values()) if p.edges else 0.0
    lam = float(sum(p.rates))
    pbar = max((len(ps) for ps in p.path_sets), default=0)
    P = p.total_paths
    if lam == 0:
        M2 = 0.0
    else:
        M2 = (W * V * lam) ** 2 * (V * C * pbar ** 2 + R * P) * (1.0 + 1.0 / (lam * T))
    lo, hi = window_bounds(k)
    ell = np.arange(lo, hi + 1, dtype=np.float64)
    g = gamma0 / np.sqrt(ell)
    return float((D2 + M2 * np.sum(g * g)) / (2.0 * np.sum(g)))


# -- simulation ------------------------------------------------------------

def rns_restricted(p: ProblemInstance) -> ProblemInstance:
    """Copy of ``p`` whose path sets hold only the least-weight path."""
    idx = route_rns_indices(p)
    return p.with_path_sets([(ps[r],) for ps, r in zip(p.path_sets, idx)], name=p.name)


def initial_state(p: ProblemInstance, init="uniform") -> FractionalState:
    if isinstance(init, FractionalState):
        return init.copy()
    if init == "uniform":
        return FractionalState.uniform(p)
    raise ValueError(f"unknown initial state {init!r}")


def _rng(seed, *tags):
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


@dataclass
class SlotRecord:
    slot: int
    time: float
    F_smoothed: float
    cost_smoothed: float
    cost_sampled: float
    ctrl_msgs: int


@dataclass(frozen=True)
class SimTrace:
    """Per-slot record of a simulation run."""

    records: tuple
    smoothed: tuple = field(repr=False, default=())
    caches: tuple = field(repr=False, default=())
    c0: float = 0.0

    COLUMNS = ("slot", "time", "F_smoothed", "cost_smoothed", "cost_sampled", "ctrl_msgs")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def times(self):
        return self.column("time")

    @property
    def gains(self):
        return self.column("F_smoothed")

    def steady_state_gain(self, frac=0.2):
        g = self.gains
        n = max(1, int(math.ceil(frac * len(g))))
        return float(g[-n:].mean())

    def to_csv(self, out):
        def write(fh):
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.slot, repr(r.time), repr(r.F_smoothed), repr(r.cost_smoothed),
                            repr(r.cost_sampled), r.ctrl_msgs])
        if hasattr(out, "write"):
            write(out)
        else:
            with open(out, "w", newline="") as fh:
                write(fh)


class PGASimulator:
    """Step-by-step projected gradient ascent; also usable as a continuous-time
    process through :meth:`advance` and :meth:`snapshot`."""

    def __init__(self, p: ProblemInstance, cfg: SlotConfig):
        self.p = p
        self.cfg = cfg
        self.state = initial_state(p, cfg.init)
        self.history: List[FractionalState] = []
        self.weights: List[float] = []
        self.k = 0
        self.bank = MeasurementBank.empty(p)
        self.smoothed: Optional[FractionalState] = None
        self.caches = None
        self.records: List[SlotRecord] = []
        self.c0 = c0_sr(p)
        sizes = np.diff(p.class_offsets)
        self._cls_of_path = np.repeat(np.arange(p.n_classes), sizes)
        self.keep_states = False
        self._states, self._caches = [], []

    @property
    def time(self):
        return self.k * self.cfg.T

    # protocol pieces
    def _begin_slot(self):
        p, cfg = self.p, self.cfg
        self.k += 1
        k = self.k
        self.history.append(self.state)
        self.weights.append(cfg.gamma0 / math.sqrt(k))
        self.smoothed = smooth(self.history, self.weights, k)
        self.caches = tuple(
            sample_cache(self.smoothed.xi[v], p.capacity[v], _rng(cfg.seed, CACHE_TAG, k, v))
            for v in range(p.n_nodes)
        )

    def _arrival_counts(self):
        rng = _rng(self.cfg.seed, ARRIVAL_TAG, self.k)
        return rng.poisson(np.asarray(self.p.rates) * self.cfg.T) if self.p.n_classes else np.zeros(0, int)

    def _measure(self, counts):
        """Control messages of one slot at the raw state, summed into the bank."""
        p, cfg, st = self.p, self.cfg, self.state
        if cfg.variant == "full":
            sent = counts[self._cls_of_path].astype(np.float64)
            scale = np.ones(p.total_paths)
        else:
            rng = _rng(cfg.seed, CTRL_TAG, self.k)
            sent = np.zeros(p.total_paths)
            scale = np.zeros(p.total_paths)
            for c in range(p.n_classes):
                sl = p.class_slice(c)
                supp = np.flatnonzero(st.rho[sl] > 0)
                scale[sl.start + supp] = len(supp)
                if counts[c]:
                    picks = rng.integers(0, len(supp), size=counts[c])
                    sent[sl.start + supp] += np.bincount(picks, minlength=len(supp))
        q, Z, hops = kernels.sweep(p.table, st.rho, st.xi, sent * scale)
        self.bank.add(q, Z, 2 * int(np.dot(sent, hops)))

    def step_slot(self) -> SlotRecord:
        p, cfg = self.p, self.cfg
        self._begin_slot()
        counts = self._arrival_counts()
        self.bank.clear()
        self._measure(counts)
        grads = estimate_subgradients(self.bank, cfg.T)
        gamma = self.weights[-1]
        self.state = adapt_and_project(self.state, grads, gamma, p, cfg.routing == "fixed")
        sm = self.smoothed
        cost_s = cost_sr(sm, p, check=False)
        xi_x = np.zeros_like(sm.xi)
        for v, items in enumerate(self.caches):
            xi_x[v, list(items)] = 1.0
        cost_x = float(np.dot(p.table.rate * sm.rho, kernels.unit_costs(p.table, xi_x)))
        rec = SlotRecord(self.k, self.k * cfg.T, self.c0 - cost_s, cost_s, cost_x, self.bank.ctrl_msgs)
        self.records.append(rec)
        if self.keep_states:
            self._states.append(sm)
            self._caches.append(self.caches)
        return rec

    def advance(self, t):
        """Run slots until the slot containing time ``t`` is the current one."""
        while self.k == 0 or t >= self.k * self.cfg.T:
            self.step_slot()

    def snapshot(self):
        """Current routing marginals and integral caches ``(rho_bar, X)``."""
        return self.smoothed.rho, self.caches

    def snapshot_cost(self):
        rho, caches = self.snapshot()
        xi = np.zeros((self.p.n_nodes, self.p.n_items))
        for v, items in enumerate(caches):
            xi[v, list(items)] = 1.0
        return float(np.dot(self.p.table.rate * rho, kernels.unit_costs(self.p.table, xi)))

    @property
    def messages(self):
        return int(sum(r.ctrl_msgs for r in self.records))

    def trace(self) -> SimTrace:
        return SimTrace(tuple(self.records), tuple(self._states), tuple(self._caches), self.c0)


def simulate(p: ProblemInstance, cfg: SlotConfig, keep_states=False) -> SimTrace:
    """Run ``cfg.slots`` slots and return the per-slot trace."""
    sim = PGASimulator(p, cfg)
    sim.keep_states = keep_states
    for _ in range(cfg.slots):
        sim.step_slot()
    return sim.trace()


def slot_estimates(p: ProblemInstance, state: FractionalState, T: float, n_slots: int,
                   seed=0, variant="full"):
    """Subgradient estimates of ``n_slots`` independent slots at a frozen state.

    Returns arrays of shape ``(n_slots, P)`` and ``(n_slots, V, C)``.
    """
    cfg = SlotConfig(T=T, seed=seed, variant=variant, slots=1)
    sim = PGASimulator(p, cfg)
    sim.state = state.copy()
    qs = np.empty((n_slots, p.total_paths))
    zs = np.empty((n_slots, p.n_nodes, p.n_items))
    for k in range(n_slots):
        sim.k = k + 1
        sim.bank.clear()
        sim._measure(sim._arrival_counts())
        g = estimate_subgradients(sim.bank, T)
        qs[k], zs[k] = g.q, g.Z
    return qs, zs
