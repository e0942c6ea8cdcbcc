"""Experiment orchestration: policy x routing grids and cost measurement.

Config files are JSON objects::

    {
      "instance": "path/to/instance.txt"            # or a generator spec:
      "instance": {"topology": "abilene", "n_paths": 10, ...},
      "policies": ["pga", "lru"],
      "routings": ["s", "u", "d"],
      "total_time": 5000, "warmup": 1000, "sample_mean_interval": 1.0,
      "seeds": [0, 1, 2], "slot_T": 50, "gamma0": 1.0
    }

A generator spec accepts the keyword arguments of
:func:`cachenet.topogen.build_instance`; unless it fixes ``seed`` the
instance is regenerated with every run seed.

``pga`` with routing ``d`` is the joint algorithm, ``s`` restricts every
class to its least-weight path and ``u`` freezes routing at uniform. The
output CSV has the fixed columns :data:`COLUMNS`.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Union

import numpy as np

from .baselines import POLICIES, BaselineSimulator
from .netmodel import ProblemInstance, read_instance
from .objective import c0_sr
from .online import PGASimulator, SlotConfig, rns_restricted

COLUMNS = ("topology", "policy", "routing", "seed", "cbar", "ratio_to_pga",
           "convergence_time", "ctrl_msgs", "status")


@dataclass
class ExperimentConfig:
    instance: Union[str, dict] = field(default_factory=lambda: {"topology": "abilene"})
    policies: List[str] = field(default_factory=lambda: ["pga", "lru"])
    routings: List[str] = field(default_factory=lambda: ["s", "u", "d"])
    total_time: float = 5000.0
    warmup: float = 1000.0
    sample_mean_interval: float = 1.0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    slot_T: float = 50.0
    gamma0: float = 1.0
    variant: str = "full"

    def __post_init__(self):
        if not self.warmup < self.total_time:
            raise ValueError("warmup must be shorter than total_time")
        if self.sample_mean_interval <= 0 or self.slot_T <= 0:
            raise ValueError("intervals must be positive")

    @classmethod
    def from_json(cls, source):
        if hasattr(source, "read"):
            data = json.load(source)
        else:
            with open(source) as fh:
                data = json.load(fh)
        return cls(**data)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def load_config_instance(spec, seed) -> ProblemInstance:
    if isinstance(spec, ProblemInstance):
        return spec
    if isinstance(spec, str):
        return read_instance(spec)
    from .topogen import build_instance
    kw = dict(spec)
    kw.setdefault("seed", seed)
    return build_instance(**kw)


def make_simulator(p: ProblemInstance, policy, routing, seed, cfg: ExperimentConfig):
    policy = policy.lower()
    if policy == "pga":
        scfg = SlotConfig(T=cfg.slot_T, gamma0=cfg.gamma0, seed=seed, variant=cfg.variant,
                          slots=max(1, int(math.ceil(cfg.total_time / cfg.slot_T))))
        if routing == "s":
            return PGASimulator(rns_restricted(p), scfg)
        if routing == "u":
            scfg.routing = "fixed"  # the uniform initial state routes uniformly
            return PGASimulator(p, scfg)
        if routing in ("d", "joint"):
            return PGASimulator(p, scfg)
        raise ValueError(f"unknown routing {routing!r} for pga")
    if policy in POLICIES:
        return BaselineSimulator(p, policy, routing, seed=seed, T=cfg.slot_T)
    raise ValueError(f"unknown policy {policy!r}")


def measure_snapshots(sim, cfg: ExperimentConfig, rng=None):
    """Evaluate the cost of the current strategy at exponential epochs.

    Returns
    -------
    (times, costs, cbar)
        All epochs and their costs, and the mean cost over epochs after warmup.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    times, costs = [], []
    t = rng.exponential(cfg.sample_mean_interval)
    while t <= cfg.total_time:
        sim.advance(t)
        times.append(t)
        costs.append(sim.snapshot_cost())
        t += rng.exponential(cfg.sample_mean_interval)
    times, costs = np.asarray(times), np.asarray(costs)
    post = costs[times >= cfg.warmup]
    cbar = float(post.mean()) if post.size else math.nan
    return times, costs, cbar


def convergence_time(times, gains, steady_frac=0.2):
    """First time the running time-average of ``gains`` reaches 95% of its steady state.

    ``gains[k]`` is taken as constant on ``(times[k-1], times[k]]`` with the
    series starting at time 0; the steady state is the mean of the last
    ``steady_frac`` of the samples. Returns ``0.0`` for a non-positive steady
    state and ``inf`` if the average never gets there.
    """
    times = np.asarray(times, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    if gains.size == 0:
        return math.inf
    n = max(1, int(math.ceil(steady_frac * len(gains))))
    steady = float(gains[-n:].mean())
    if steady <= 0:
        return 0.0
    target = 0.95 * steady
    integral, t_prev = 0.0, 0.0
    for t, g in zip(times, gains):
        if t_prev == 0.0 and g >= target:
            return 0.0
        # on (t_prev, t] the average minus target has the sign of
        # (integral - g t_prev) + (g - target) x, negative at x = t_prev
        if g > target:
            x = (g * t_prev - integral) / (g - target)
            if x <= t:
                return float(max(x, t_prev))
        integral += g * (t - t_prev)
        t_prev = t
    return math.inf


def run_cell(p, policy, routing, seed, cfg: ExperimentConfig):
    sim = make_simulator(p, policy, routing, seed, cfg)
    times, costs, cbar = measure_snapshots(sim, cfg, np.random.default_rng([seed, 99]))
    c0 = c0_sr(sim.p)
    conv = convergence_time(times, c0 - costs)
    return {"cbar": cbar, "convergence_time": conv, "ctrl_msgs": sim.messages}


def _run_row(p, topo, policy, routing, seed, cfg):
    row = {"topology": topo, "policy": policy, "routing": routing, "seed": seed}
    try:
        row.update(run_cell(p, policy, routing, seed, cfg))
        row["status"] = "ok"
    except Exception as exc:  # grid continues past a failing cell
        row.update(cbar=math.nan, convergence_time=math.nan, ctrl_msgs=0,
                   status=f"error: {exc}")
    return row


def run_grid(cfg: ExperimentConfig, out=None, instance=None, workers=1):
    """Run every (seed, policy, routing) cell; failures are recorded, not raised.

    Cells are independent; with ``workers > 1`` they run in a process pool and
    are collected in grid order, so the output does not depend on ``workers``.

    Returns the list of row dicts (per seed, then a ``mean`` row per cell) and
    writes them as CSV when ``out`` is given.
    """
    rows = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for seed in cfg.seeds:
            p = load_config_instance(instance if instance is not None else cfg.instance, seed)
            topo = p.name.split(" ")[0] if p.name else "instance"
            args = [(p, topo, policy, routing, seed, cfg)
                    for policy in cfg.policies for routing in cfg.routings]
            if pool is None:
                cells = [_run_row(*a) for a in args]
            else:
                cells = list(pool.map(_run_row, *zip(*args)))
            rows.extend(_with_ratios(cells, p, seed, cfg))
    finally:
        if pool is not None:
            pool.shutdown()
    rows.extend(_mean_rows(rows, cfg))
    if out is not None:
        write_rows(rows, out)
    return rows


def _with_ratios(cells, p, seed, cfg):
    ref = next((r["cbar"] for r in cells if r["policy"] == "pga" and r["routing"] == "d"), None)
    if ref is None:
        ref = _reference_cbar(p, seed, cfg)
    for r in cells:
        r["ratio_to_pga"] = (1.0 if r["policy"] == "pga" and r["routing"] == "d"
                             else r["cbar"] / ref if ref else math.nan)
    return cells


def _reference_cbar(p, seed, cfg):
    try:
        return run_cell(p, "pga", "d", seed, cfg)["cbar"]
    except Exception:
        return None


def _mean_rows(rows, cfg):
    out = []
    for policy in cfg.policies:
        for routing in cfg.routings:
            sel = [r for r in rows if r["policy"] == policy and r["routing"] == routing
                   and r["status"] == "ok"]
            if not sel:
                continue
            mean = {"topology": sel[0]["topology"], "policy": policy, "routing": routing,
                    "seed": "mean", "status": "ok"}
            for key in ("cbar", "ratio_to_pga", "convergence_time", "ctrl_msgs"):
                mean[key] = float(np.mean([r[key] for r in sel]))
            out.append(mean)
    return out


def write_rows(rows, out):
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
    if hasattr(out, "write"):
        write(out)
    else:
        with open(out, "w", newline="") as fh:
            write(fh)


def _fmt(x):
    if isinstance(x, float):
        return repr(float(x))
    return str(x)
