"""Compare the compiled and the numpy kernels on generated instances.

Usage::

    python3 benchmarks/bench_kernels.py [--topology geant] [--repeat 20]

Prints the median wall time per call for each kernel and backend, the
speedup, and the largest absolute difference between the two backends.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from cachenet import _pykernels
from cachenet.netmodel import FractionalState
from cachenet.offline import random_fractional_state
from cachenet.topogen import build_instance

try:
    from cachenet import _ckernels
except ImportError:  # compiled extension not built
    _ckernels = None


def _time(fn, repeat):
    fn()  # warm caches (padding for the numpy backend)
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return statistics.median(out)


def bench(p, repeat=20, seed=0):
    table = p.table
    st: FractionalState = random_fractional_state(p, np.random.default_rng(seed))
    rho = np.ascontiguousarray(st.rho, dtype=np.float64)
    xi = np.ascontiguousarray(st.xi, dtype=np.float64)
    mult = np.ascontiguousarray(table.rate, dtype=np.float64)
    calls = {
        "unit_costs": lambda m: m.unit_costs(table, xi),
        "surrogate": lambda m: m.surrogate(table, rho, xi),
        "sweep": lambda m: m.sweep(table, rho, xi, mult),
    }
    rows = []
    for name, call in calls.items():
        t_py = _time(lambda: call(_pykernels), repeat)
        if _ckernels is None:
            rows.append((name, t_py, None, None))
            continue
        t_c = _time(lambda: call(_ckernels), repeat)
        a, b = call(_pykernels), call(_ckernels)
        if not isinstance(a, tuple):
            a, b = (a,), (b,)
        diff = max(float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))))
                   if np.size(x) else 0.0 for x, y in zip(a, b))
        rows.append((name, t_py, t_c, diff))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--topology", action="append",
                    help="topology to build (repeatable); default abilene and geant")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for topo in args.topology or ["abilene", "geant"]:
        p = build_instance(topo, seed=args.seed)
        print(f"{topo}: {p.total_paths} paths, {len(p.table.nodes)} path-node slots")
        print(f"  {'kernel':<11}{'python ms':>11}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
        for name, t_py, t_c, diff in bench(p, args.repeat, args.seed):
            if t_c is None:
                print(f"  {name:<11}{t_py * 1e3:>11.3f}{'n/a':>11}")
            else:
                print(f"  {name:<11}{t_py * 1e3:>11.3f}{t_c * 1e3:>11.3f}"
                      f"{t_py / t_c:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
