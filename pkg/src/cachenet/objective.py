"""Routing cost, caching gain, concave surrogate and its subgradient (source routing)."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .netmodel import (FractionalState, InfeasibleStateError, IntegralStrategy,
                       ProblemInstance, feasible_fractional, feasible_integral)


@dataclass
class SubgradientPair:
    """Partial derivatives of the surrogate.

    ``q`` is flat over all paths (class ``c`` occupies ``p.class_slice(c)``),
    ``Z`` has shape ``(n_nodes, n_items)``.
    """

    q: np.ndarray
    Z: np.ndarray

    def __add__(self, other):
        return SubgradientPair(self.q + other.q, self.Z + other.Z)

    def scaled(self, a):
        return SubgradientPair(self.q * a, self.Z * a)


def _as_state(state, p: ProblemInstance, check=True) -> FractionalState:
    if isinstance(state, IntegralStrategy):
        if check and not feasible_integral(state, p):
            raise InfeasibleStateError("integral strategy violates the capacity constraints")
        return state.to_fractional(p)
    if check and not feasible_fractional(state, p):
        raise InfeasibleStateError("fractional state outside the relaxed feasible set")
    return state


def path_unit_costs(state, p: ProblemInstance) -> np.ndarray:
    """Expected response cost of every path under the caching marginals only."""
    xi = state.xi if isinstance(state, FractionalState) else np.asarray(state)
    return kernels.unit_costs(p.table, xi)


def class_costs(state, p: ProblemInstance, check=True) -> np.ndarray:
    """Per-class cost, unweighted by the rates."""
    s = _as_state(state, p, check)
    u = kernels.unit_costs(p.table, s.xi) * s.rho
    return np.add.reduceat(u, p.class_offsets[:-1]) if p.n_classes else np.zeros(0)


def cost_sr(state, p: ProblemInstance, check=True) -> float:
    """Expected aggregate routing cost of an integral or fractional strategy.

    Raises
    ------
    InfeasibleStateError
        If ``check`` and the state is not feasible.
    """
    s = _as_state(state, p, check)
    if p.total_paths == 0:
        return 0.0
    return float(np.dot(p.table.rate * s.rho, kernels.unit_costs(p.table, s.xi)))


def c0_sr(p: ProblemInstance) -> float:
    """Sum of ``lambda * w`` over every hop of every candidate path."""
    t = p.table
    if t.n_paths == 0:
        return 0.0
    per_path = np.add.reduceat(t.weights, t.offsets[:-1])
    return float(np.dot(t.rate, per_path))


def gain_sr(state, p: ProblemInstance, check=True) -> float:
    return c0_sr(p) - cost_sr(state, p, check)


def surrogate_L_sr(state: FractionalState, p: ProblemInstance, check=True) -> float:
    s = _as_state(state, p, check)
    return kernels.surrogate(p.table, s.rho, s.xi)


def exact_subgradient_L_sr(state: FractionalState, p: ProblemInstance, check=True) -> SubgradientPair:
    """Upper partial derivatives of the surrogate.

    An indicator ``1 - rho_p + sum xi <= 1`` (weak inequality) selects the
    terms whose ``min`` has not saturated, so the result equals the gradient
    wherever the surrogate is differentiable.
    """
    s = _as_state(state, p, check)
    q, Z, _ = kernels.sweep(p.table, s.rho, s.xi, p.table.rate)
    return SubgradientPair(q, Z)


def cost_gradient(state: FractionalState, p: ProblemInstance):
    """Gradient of the (multilinear) expected cost in ``(rho, xi)``."""
    t = p.table
    g_rho = t.rate * kernels.unit_costs(t, state.xi)
    g_xi = np.zeros_like(state.xi)
    for j in range(t.n_paths):
        a, b = t.offsets[j], t.offsets[j + 1]
        nodes = t.nodes[a:b]
        w = t.weights[a:b]
        i = t.item[j]
        one_minus = 1.0 - state.xi[nodes, i]
        scale = t.rate[j] * state.rho[j]
        if scale == 0.0:
            continue
        for k in range(len(nodes)):
            # d/dxi_k of sum_m w_m prod_{l<=m}(1 - x_l), taken over m >= k
            before = np.prod(one_minus[:k])
            run, acc = before, 0.0
            for m in range(k, len(nodes)):
                if m > k:
                    run *= one_minus[m]
                acc += w[m] * run
            g_xi[nodes[k], i] -= scale * acc
    return g_rho, g_xi
