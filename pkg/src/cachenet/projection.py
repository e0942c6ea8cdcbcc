"""Euclidean projections onto the simplex and the capped simplex."""
import numpy as np


def project_simplex(v, z=1.0):
    """Project ``v`` onto ``{w >= 0 : sum(w) = z}`` by sorting.

    Parameters
    ----------
    v : array_like, shape (n,)
    z : float
        Target sum, must be positive.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if n == 0:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    r = ind[cond][-1]
    theta = css[cond][-1] / r
    return np.maximum(v - theta, 0.0)


def project_capped_simplex(v, c):
    """Project ``v`` onto ``{w in [0, 1]^n : sum(w) = c}``.

    The projection is ``clip(v - tau, 0, 1)`` for the unique shift ``tau``
    solving ``sum(clip(v - tau, 0, 1)) = c``. The sum is piecewise linear in
    ``tau`` with breakpoints at ``v`` and ``v - 1``, so ``tau`` is found exactly
    by locating the bracketing breakpoints.

    Raises
    ------
    ValueError
        If ``c`` is negative or exceeds ``len(v)``.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    if c < 0 or c > n:
        raise ValueError(f"capacity {c} outside [0, {n}]")
    if c == 0:
        return np.zeros(n)
    if c == n:
        return np.ones(n)
    bp = np.unique(np.concatenate([v, v - 1.0]))

    # the sum is non-increasing in tau: n at min(bp), 0 at max(bp)
    sums = _totals(v, bp)
    hi = np.searchsorted(-sums, -c, side="left")  # first breakpoint with sum <= c
    if sums[hi] == c:
        tau = bp[hi]
    else:
        lo = hi - 1
        t0, t1, s0, s1 = bp[lo], bp[hi], sums[lo], sums[hi]
        tau = t0 + (s0 - c) * (t1 - t0) / (s0 - s1)
    return np.clip(v - tau, 0.0, 1.0)


def _totals(v, bp):
    # sum_i clip(v_i - t, 0, 1) for every t in bp, vectorized through sorting
    vs = np.sort(v)
    n = len(vs)
    csum = np.concatenate([[0.0], np.cumsum(vs)])
    # entries with v_i - t >= 1 contribute 1, with 0 < v_i - t < 1 contribute v_i - t
    a = np.searchsorted(vs, bp, side="right")        # v_i <= t contributes 0
    b = np.searchsorted(vs, bp + 1.0, side="left")   # v_i >= t + 1 contributes 1
    mid = b - a
    return (n - b) + (csum[b] - csum[a]) - mid * bp
