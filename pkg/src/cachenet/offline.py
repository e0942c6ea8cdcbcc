"""Offline approximation: concave relaxation, pipage rounding, routing rounding.

Also hosts the exhaustive oracle used to certify the approximation on small
instances and the diamond instance on which cache-oblivious routing is
arbitrarily bad.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from . import kernels
from .netmodel import (FEASIBILITY_TOL, FractionalState, IntegralStrategy,
                       ProblemInstance)
from .objective import (c0_sr, cost_gradient, cost_sr, exact_subgradient_L_sr,
                        gain_sr, path_unit_costs, surrogate_L_sr)
from .projection import project_capped_simplex, project_simplex

BRUTE_FORCE_BUDGET = 10 ** 7
SNAP_TOL = 1e-9


class BudgetExceededError(RuntimeError):
    """The exhaustive search would enumerate too many strategies."""


@dataclass
class RelaxationResult:
    state: FractionalState
    value: float
    converged: bool
    iterations: int
    method: str


@dataclass
class OfflineSolution:
    fractional: FractionalState
    integral: IntegralStrategy
    relaxation_value: float
    gain: float
    certified_ratio: float
    converged: bool = True
    rounding_trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "relaxation_value": self.relaxation_value,
            "gain": self.gain,
            "certified_ratio": self.certified_ratio,
            "converged": self.converged,
            "routing": list(self.integral.routing),
            "caching": [sorted(c) for c in self.integral.caching],
        }


def project_state(state: FractionalState, p: ProblemInstance) -> FractionalState:
    """Euclidean projection onto the relaxed feasible set (separable per block)."""
    rho = np.empty_like(state.rho)
    for c in range(p.n_classes):
        sl = p.class_slice(c)
        rho[sl] = project_simplex(state.rho[sl])
    xi = np.vstack([project_capped_simplex(state.xi[v], p.capacity[v])
                    for v in range(p.n_nodes)]) if p.n_nodes else state.xi.copy()
    return FractionalState(rho, xi.reshape(state.xi.shape))


# -- relaxation ------------------------------------------------------------

def _lp_layout(p: ProblemInstance):
    """Column layout ``[t..., rho..., xi...]`` plus the hop list of every t."""
    t = p.table
    hops = []  # (path j, flat position a+k, k)
    for j in range(t.n_paths):
        a, b = t.offsets[j], t.offsets[j + 1]
        for k in range(b - a - 1):
            hops.append((j, a, k))
    n_t = len(hops)
    n_rho = t.n_paths
    n_xi = p.n_nodes * p.n_items
    return hops, n_t, n_rho, n_xi


def _lp_arrays(p: ProblemInstance):
    t = p.table
    hops, n_t, n_rho, n_xi = _lp_layout(p)
    C = p.n_items
    rows, cols, vals, b_ub = [], [], [], []
    obj = np.zeros(n_t + n_rho + n_xi)
    for r, (j, a, k) in enumerate(hops):
        obj[r] = t.rate[j] * t.weights[a + k]
        # t - (1 - rho) - sum xi <= 0  <=>  t + rho - sum xi <= 1
        rows += [r, r]
        cols += [r, n_t + j]
        vals += [1.0, 1.0]
        for m in range(k + 1):
            rows.append(r)
            cols.append(n_t + n_rho + t.nodes[a + m] * C + t.item[j])
            vals.append(-1.0)
        b_ub.append(1.0)
    A_ub = coo_matrix((vals, (rows, cols)), shape=(n_t, len(obj))).tocsr() if n_t else None
    erows, ecols, evals, b_eq = [], [], [], []
    r = 0
    for c in range(p.n_classes):
        for j in range(p.class_offsets[c], p.class_offsets[c + 1]):
            erows.append(r)
            ecols.append(n_t + j)
            evals.append(1.0)
        b_eq.append(1.0)
        r += 1
    for v in range(p.n_nodes):
        for i in range(C):
            erows.append(r)
            ecols.append(n_t + n_rho + v * C + i)
            evals.append(1.0)
        b_eq.append(float(p.capacity[v]))
        r += 1
    A_eq = coo_matrix((evals, (erows, ecols)), shape=(r, len(obj))).tocsr()
    return obj, A_ub, np.asarray(b_ub), A_eq, np.asarray(b_eq), (n_t, n_rho, n_xi)


def _solve_lp(p: ProblemInstance) -> RelaxationResult:
    obj, A_ub, b_ub, A_eq, b_eq, (n_t, n_rho, n_xi) = _lp_arrays(p)
    res = linprog(-obj, A_ub=A_ub, b_ub=b_ub if n_t else None, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = res.x
    state = FractionalState(x[n_t:n_t + n_rho], x[n_t + n_rho:].reshape(p.n_nodes, p.n_items))
    # clean solver round-off so the state passes the 1e-9 feasibility check
    state = project_state(FractionalState(np.clip(state.rho, 0, 1), np.clip(state.xi, 0, 1)), p)
    return RelaxationResult(state, surrogate_L_sr(state, p, check=False), True, int(res.nit), "lp")


def _solve_subgradient(p, tol, max_iters, gamma0=None, window=50, init=None) -> RelaxationResult:
    state = FractionalState.uniform(p) if init is None else init.copy()
    if gamma0 is None:
        # scale steps to the magnitude of the subgradient at the start
        g = exact_subgradient_L_sr(state, p, check=False)
        norm = math.sqrt(float(np.sum(g.q ** 2) + np.sum(g.Z ** 2)))
        gamma0 = 1.0 / norm if norm > 0 else 1.0
    hist_states, hist_w = [], []
    best_state, best_val = state.copy(), surrogate_L_sr(state, p, check=False)
    vals = []
    converged = False
    k = 0
    for k in range(1, max_iters + 1):
        gk = gamma0 / math.sqrt(k)
        g = exact_subgradient_L_sr(state, p, check=False)
        hist_states.append(state)
        hist_w.append(gk)
        state = project_state(FractionalState(state.rho + gk * g.q, state.xi + gk * g.Z), p)
        avg = _window_average(hist_states, hist_w, k)
        val = surrogate_L_sr(avg, p, check=False)
        vals.append(val)
        for cand, cv in ((avg, val), (state, surrogate_L_sr(state, p, check=False))):
            if cv > best_val:
                best_state, best_val = cand.copy(), cv
        if k > window and vals[-1] - vals[-1 - window] < tol * max(1.0, abs(best_val)):
            converged = True
            break
    if not converged:
        warnings.warn("subgradient relaxation solver hit max_iters before tolerance", RuntimeWarning)
    return RelaxationResult(best_state, best_val, converged, k, "subgradient")


def _window_average(states, weights, k):
    lo = max(1, k // 2)
    w = np.asarray(weights[lo - 1:k])
    w = w / w.sum()
    rho = sum(wi * s.rho for wi, s in zip(w, states[lo - 1:k]))
    xi = sum(wi * s.xi for wi, s in zip(w, states[lo - 1:k]))
    return FractionalState(rho, xi)


def solve_relaxation(p: ProblemInstance, tol=1e-6, max_iters=20000, method="lp", **kw) -> RelaxationResult:
    """Maximize the concave surrogate over the relaxed feasible set.

    Parameters
    ----------
    method : {"lp", "subgradient"}
        ``"lp"`` solves the equivalent linear program exactly with HiGHS.
        ``"subgradient"`` runs projected subgradient ascent with steps
        ``gamma0 / sqrt(k)`` and sliding-window averaging, stopping when the
        averaged value improves by less than ``tol`` over 50 iterations.
    """
    if method == "lp":
        return _solve_lp(p)
    if method == "subgradient":
        return _solve_subgradient(p, tol, max_iters, **kw)
    raise ValueError(f"unknown relaxation method {method!r}")


def export_lp(p: ProblemInstance, out=None) -> str:
    """Write the surrogate-maximization LP in CPLEX LP format.

    Variables are ``t_j_k`` (hop ``k`` of path ``j``), ``rho_j`` and ``xi_v_i``.
    """
    obj, A_ub, b_ub, A_eq, b_eq, (n_t, n_rho, n_xi) = _lp_arrays(p)
    hops, *_ = _lp_layout(p)
    C = p.n_items
    names = [f"t_{j}_{k}" for (j, _a, k) in hops]
    names += [f"rho_{j}" for j in range(n_rho)]
    names += [f"xi_{v}_{i}" for v in range(p.n_nodes) for i in range(C)]

    def expr(coefs):
        terms = []
        for idx, c in coefs:
            if c == 0:
                continue
            sign = "-" if c < 0 else "+"
            terms.append(f"{sign} {abs(c):.17g} {names[idx]}")
        if not terms:
            return "0 " + names[0] if names else "0"
        s = " ".join(terms)
        return s[2:] if s.startswith("+ ") else s

    lines = ["\\ surrogate maximization for joint caching and routing", "Maximize"]
    lines.append(" obj: " + expr(list(enumerate(obj))))
    lines.append("Subject To")
    if A_ub is not None:
        for r in range(A_ub.shape[0]):
            row = A_ub.getrow(r)
            lines.append(f" hop{r}: {expr(zip(row.indices, row.data))} <= {b_ub[r]:.17g}")
    for r in range(A_eq.shape[0]):
        row = A_eq.getrow(r)
        if row.nnz:
            lines.append(f" eq{r}: {expr(zip(row.indices, row.data))} = {b_eq[r]:.17g}")
    lines.append("Bounds")
    for nm in names:
        lines.append(f" 0 <= {nm} <= 1")
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w") as fh:
                fh.write(text)
    return text


# -- rounding --------------------------------------------------------------

def _fractional_idx(row, tol):
    return [i for i, x in enumerate(row) if tol < x < 1.0 - tol]


def pipage_round_caching(state: FractionalState, p: ProblemInstance, trace=None) -> FractionalState:
    """Round the caching marginals to an integral placement without lowering F.

    Nodes are scanned in index order; at each step the two lowest-index
    fractional items of the node exchange mass until one becomes integral,
    in whichever direction gives the larger gain (first direction on ties).
    ``trace``, when a list, receives the gain after every step.
    """
    s = state.copy()
    table = p.table
    lam_rho = table.rate * s.rho
    cur = c0_sr(p) - float(np.dot(lam_rho, kernels.unit_costs(table, s.xi)))
    if trace is not None:
        trace.append(cur)
    for v in range(p.n_nodes):
        row = s.xi[v].copy()
        while True:
            frac = _fractional_idx(row, SNAP_TOL)
            if len(frac) < 2:
                break
            i, j = frac[0], frac[1]
            e1 = min(1.0 - row[i], row[j])
            e2 = min(row[i], 1.0 - row[j])
            best = None
            for di, dj in ((e1, -e1), (-e2, e2)):
                candidate = row.copy()
                candidate[i] += di
                candidate[j] += dj
                s.xi[v] = candidate
                val = c0_sr(p) - float(np.dot(lam_rho, kernels.unit_costs(table, s.xi)))
                if best is None or val > best[0]:
                    best = (val, candidate)
            row = _snap(best[1])
            s.xi[v] = row
            cur = best[0]
            if trace is not None:
                trace.append(cur)
        frac = _fractional_idx(row, SNAP_TOL)
        # an integral capacity leaves no single fractional entry except round-off
        row = np.where(np.arange(len(row)) == (frac[0] if frac else -1), np.round(row), row)
        s.xi[v] = _snap(row)
    return s


def _snap(row):
    row = row.copy()
    row[np.abs(row) <= SNAP_TOL] = 0.0
    row[np.abs(row - 1.0) <= SNAP_TOL] = 1.0
    return row


def round_routing(state: FractionalState, p: ProblemInstance) -> FractionalState:
    """Route every class on its path of least expected cost (lowest index on ties)."""
    unit = path_unit_costs(state, p)
    rho = np.zeros_like(state.rho)
    for c in range(p.n_classes):
        sl = p.class_slice(c)
        rho[sl.start + int(np.argmin(unit[sl]))] = 1.0
    return FractionalState(rho, state.xi.copy())


def offline_solve(p: ProblemInstance, tol=1e-6, method="lp", **kw) -> OfflineSolution:
    """Relax, round caching, then round routing."""
    res = solve_relaxation(p, tol=tol, method=method, **kw)
    trace = []
    cached = pipage_round_caching(res.state, p, trace=trace)
    routed = round_routing(cached, p)
    trace.append(gain_sr(routed, p, check=False))
    integral = routed.to_integral(p)
    gain = gain_sr(integral, p)
    ratio = gain / res.value if res.value > 0 else 1.0
    return OfflineSolution(res.state, integral, res.value, gain, ratio, res.converged, trace)


# -- exhaustive oracle -----------------------------------------------------

def route_rns_indices(p: ProblemInstance):
    """Least raw-weight path per class (lowest index on ties)."""
    return [int(np.argmin([p.path_weight(q) for q in paths])) for paths in p.path_sets]


def _combos(p):
    return [list(itertools.combinations(range(p.n_items), p.capacity[v])) for v in range(p.n_nodes)]


def enumeration_size(p: ProblemInstance) -> int:
    n = 1
    for v in range(p.n_nodes):
        n *= math.comb(p.n_items, p.capacity[v])
    for paths in p.path_sets:
        n *= len(paths)
    return n


def brute_force_opt(p: ProblemInstance, rns_only=False, budget=BRUTE_FORCE_BUDGET):
    """Exact minimum of the routing cost over integral strategies.

    Routing decouples across classes once caches are fixed, so every caching
    configuration is scored with the per-class cheapest path. Ties resolve to
    the lexicographically first configuration.

    Returns
    -------
    (IntegralStrategy, float)
    """
    size = enumeration_size(p)
    if size > budget:
        raise BudgetExceededError(f"{size} strategies exceed the enumeration budget {budget}")
    table = p.table
    rns = route_rns_indices(p) if rns_only else None
    best = (math.inf, None, None)
    xi = np.zeros((p.n_nodes, p.n_items))
    for combo in itertools.product(*_combos(p)):
        xi[:] = 0.0
        for v, items in enumerate(combo):
            xi[v, list(items)] = 1.0
        unit = kernels.unit_costs(table, xi)
        routing, total = [], 0.0
        for c in range(p.n_classes):
            sl = p.class_slice(c)
            r = rns[c] if rns_only else int(np.argmin(unit[sl]))
            routing.append(r)
            total += p.rates[c] * unit[sl.start + r]
        if total < best[0]:
            best = (total, routing, combo)
    total, routing, combo = best
    return IntegralStrategy(routing, [frozenset(c) for c in combo]), float(total)


def build_counterexample(M) -> ProblemInstance:
    """Diamond ``s - v1 - t`` / ``s - v2 - t`` with path costs ``M+1`` and ``M+2``.

    Nodes are ``s=0, v1=1, v2=2, t=3``; ``t`` serves both items; ``v1`` and
    ``v2`` hold one item each; both items are requested at ``s`` with rate 1.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    M = float(M)
    edges = {}
    for u, v, w in ((0, 1, 1.0), (1, 3, M), (0, 2, 2.0), (2, 3, M)):
        edges[(u, v)] = w
        edges[(v, u)] = w
    paths = ((0, 1, 3), (0, 2, 3))
    return ProblemInstance(
        n_nodes=4, n_items=2, edges=edges, capacity=(0, 1, 1, 0),
        servers=(frozenset({3}), frozenset({3})), classes=((0, 0), (1, 0)),
        rates=(1.0, 1.0), path_sets=(paths, paths), name=f"diamond M={M:g}",
    )


# -- equivalence of randomized and deterministic strategies ----------------

def minimize_cost_fractional(p: ProblemInstance, init: FractionalState, max_iters=3000, tol=1e-13):
    """Projected gradient descent with Armijo backtracking on the expected cost."""
    s = project_state(init, p)
    f = cost_sr(s, p, check=False)
    step = 1.0
    for _ in range(max_iters):
        g_rho, g_xi = cost_gradient(s, p)
        while True:
            cand = project_state(FractionalState(s.rho - step * g_rho, s.xi - step * g_xi), p)
            fc = cost_sr(cand, p, check=False)
            moved = np.sum((cand.rho - s.rho) ** 2) + np.sum((cand.xi - s.xi) ** 2)
            if fc <= f - 1e-4 * moved / step or step < 1e-12:
                break
            step *= 0.5
        if moved == 0 or f - fc < tol:
            if fc < f:
                s, f = cand, fc
            break
        s, f = cand, fc
        step = min(step * 2.0, 1e6)
    return s, f


def check_equivalence(p: ProblemInstance, n_starts=8, seed=0, tol=1e-6, budget=BRUTE_FORCE_BUDGET):
    """Compare the integral optimum with the best fractional cost found by descent.

    Projected descent runs from several starting points: the uniform state,
    the relaxation optimum, random feasible states and the lifted integral
    optimum, so a fractional state cheaper than every integral one would show
    up as a descent below the oracle value. Each local minimum is rounded with
    the offline rounding steps, which never increase the cost.

    Returns
    -------
    dict
        ``oracle_min`` (exhaustive integral minimum), ``fractional_min`` (best
        descent value), ``rounded_min`` (best rounded value), ``rounding_ok``
        (no rounding increased a local minimum's cost) and ``equal`` (all three
        minima agree within ``tol``).
    """
    best, oracle = brute_force_opt(p, budget=budget)
    rng = np.random.default_rng(seed)
    starts = [FractionalState.uniform(p), solve_relaxation(p).state]
    for _ in range(n_starts):
        starts.append(random_fractional_state(p, rng))
    starts.append(best.to_fractional(p))
    frac_best, rounded_best, rounding_ok = math.inf, math.inf, True
    for st in starts:
        s, f = minimize_cost_fractional(p, st)
        frac_best = min(frac_best, f)
        r = cost_sr(round_routing(pipage_round_caching(s, p), p).to_integral(p), p)
        rounding_ok &= r <= f + tol
        rounded_best = min(rounded_best, r)
    return {
        "oracle_min": oracle,
        "fractional_min": frac_best,
        "rounded_min": rounded_best,
        "rounding_ok": bool(rounding_ok),
        "equal": bool(rounding_ok and abs(rounded_best - frac_best) <= tol
                      and abs(frac_best - oracle) <= tol),
    }


def random_fractional_state(p: ProblemInstance, rng) -> FractionalState:
    """A random point of the relaxed set: Dirichlet routing, projected caching."""
    sizes = np.diff(p.class_offsets)
    rho = np.concatenate([rng.dirichlet(np.ones(n)) for n in sizes]) if len(sizes) else np.zeros(0)
    xi = np.vstack([project_capped_simplex(rng.random(p.n_items) * 2 - 0.5, p.capacity[v])
                    for v in range(p.n_nodes)])
    return FractionalState(rho, xi)
