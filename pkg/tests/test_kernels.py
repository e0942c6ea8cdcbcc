import os
import subprocess
import sys

import numpy as np
import pytest

from cachenet import _pykernels, kernels
from cachenet.offline import random_fractional_state
from cachenet.topogen import build_instance

try:
    from cachenet import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


@pytest.fixture(params=["abilene", "geant"])
def case(request, rng):
    p = build_instance(request.param, seed=1)
    s = random_fractional_state(p, rng)
    return p, s, rng.random(p.total_paths) * 3


@needs_c
def test_backends_agree(case):
    p, s, mult = case
    t = p.table
    np.testing.assert_allclose(_ckernels.unit_costs(t, s.xi), _pykernels.unit_costs(t, s.xi),
                               rtol=1e-12, atol=1e-12)
    assert _ckernels.surrogate(t, s.rho, s.xi) == pytest.approx(_pykernels.surrogate(t, s.rho, s.xi),
                                                                 rel=1e-12)
    for a, b in zip(_ckernels.sweep(t, s.rho, s.xi, mult), _pykernels.sweep(t, s.rho, s.xi, mult)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_c
def test_compiled_is_default():
    if os.environ.get("CACHENET_BACKEND", "").lower() != "python":
        assert kernels.BACKEND == "cython"


def test_python_fallback_selected():
    code = "import cachenet.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, CACHENET_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_wrapper_casts_inputs(diamond):
    xi = np.zeros((4, 2), dtype=np.float32)
    np.testing.assert_allclose(kernels.unit_costs(diamond.table, xi), [11, 12, 11, 12])
