"""Backend selection for the per-path kernels.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``CACHENET_BACKEND=python`` is set.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("CACHENET_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels



def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def unit_costs(table, xi):
    """Per-path expected cost ``sum_k w_k prod_{k'<=k}(1 - xi_{p_k', i})``."""
    return _impl.unit_costs(table, _f64(xi))


def surrogate(table, rho, xi):
    """Value of the concave surrogate at ``(rho, xi)``."""
    return float(_impl.surrogate(table, _f64(rho), _f64(xi)))


def sweep(table, rho, xi, mult):
    """Control messages on every path, weighted by ``mult``; see ``_pykernels.sweep``."""
    return _impl.sweep(table, _f64(rho), _f64(xi), _f64(mult))

__all__ = ["BACKEND", "unit_costs", "surrogate", "sweep"]
