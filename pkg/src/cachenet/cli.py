"""Command line interface: ``cachenet {gen,solve,simulate,bench}``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _cmd_gen(args):
    from .netmodel import write_instance
    from .topogen import build_instance

    kw = {}
    for name in ("n_items", "n_classes", "n_sources", "capacity", "n_paths"):
        val = getattr(args, name)
        if val is not None:
            kw[name] = val
    p = build_instance(args.kind, seed=args.seed, max_stretch=args.max_stretch, **kw)
    if args.out in (None, "-"):
        write_instance(p, sys.stdout)
    else:
        write_instance(p, args.out)
        print(f"wrote {args.out}: {p.n_nodes} nodes, {len(p.edges)} edges, "
              f"{p.n_classes} classes, {p.total_paths} paths", file=sys.stderr)
    return 0


def _cmd_solve(args):
    from .netmodel import read_instance
    from .offline import export_lp, offline_solve

    p = read_instance(args.instance)
    if args.emit_lp:
        export_lp(p, args.emit_lp)
    sol = offline_solve(p, tol=args.tol, method=args.method)
    report = sol.to_dict()
    report["instance"] = p.name
    if args.report == "json":
        json.dump(report, sys.stdout, indent=2)
        print()
    else:
        print(f"relaxation value {report['relaxation_value']:.6g}")
        print(f"gain             {report['gain']:.6g}")
        print(f"certified ratio  {report['certified_ratio']:.6g}")
        print(f"converged        {report['converged']}")
    return 0 if sol.converged else 2


def _cmd_simulate(args):
    from .harness import ExperimentConfig, measure_snapshots
    from .netmodel import read_instance
    from .online import SlotConfig, rns_restricted, simulate

    p = read_instance(args.instance)
    if args.policy == "pga":
        cfg = SlotConfig(T=args.slot_T, gamma0=args.gamma0, seed=args.seed,
                         variant=args.variant, slots=args.slots)
        if args.routing == "hh":
            from .hophop import simulate_hh
            trace = simulate_hh(p, cfg)
        else:
            if args.routing == "s":
                p = rns_restricted(p)
            elif args.routing == "u":
                cfg.routing = "fixed"
            trace = simulate(p, cfg)
        if args.out in (None, "-"):
            trace.to_csv(sys.stdout)
        else:
            trace.to_csv(args.out)
            print(f"steady-state gain {trace.steady_state_gain():.6g}", file=sys.stderr)
        return 0
    if args.routing == "hh":
        raise SystemExit("--routing hh requires --policy pga")
    from .baselines import BaselineSimulator

    total = args.slots * args.slot_T
    ecfg = ExperimentConfig(total_time=total, warmup=min(total * 0.2, total / 2),
                            slot_T=args.slot_T, seeds=[args.seed])
    sim = BaselineSimulator(p, args.policy, args.routing, seed=args.seed, T=args.slot_T)
    times, costs, cbar = measure_snapshots(sim, ecfg, np.random.default_rng([args.seed, 99]))

    def write(fh):
        fh.write("time,cost\n")
        for t, c in zip(times, costs):
            fh.write(f"{float(t)!r},{float(c)!r}\n")
    if args.out in (None, "-"):
        write(sys.stdout)
    else:
        with open(args.out, "w") as fh:
            write(fh)
    print(f"mean cost after warmup {cbar:.6g}", file=sys.stderr)
    return 0


def _cmd_bench(args):
    from .harness import ExperimentConfig, run_grid

    cfg = ExperimentConfig.from_json(args.config)
    rows = run_grid(cfg, out=args.out if args.out not in (None, "-") else None,
                    workers=args.workers)
    if args.out in (None, "-"):
        from .harness import write_rows
        write_rows(rows, sys.stdout)
    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        print(f"cell {r['policy']}-{r['routing']} seed {r['seed']}: {r['status']}", file=sys.stderr)
    return 1 if bad else 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cachenet", description="Joint caching and routing toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("--kind", required=True, help="topology kind or bundled topology name")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")
    g.add_argument("--n-items", type=int)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--n-sources", type=int)
    g.add_argument("--capacity", type=int)
    g.add_argument("--n-paths", type=int)
    g.add_argument("--max-stretch", type=float, default=4.0)
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="offline relaxation and rounding")
    s.add_argument("--instance", required=True)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--method", choices=("lp", "subgradient"), default="lp")
    s.add_argument("--emit-lp", metavar="PATH")
    s.add_argument("--report", choices=("json", "text"), default="text")
    s.set_defaults(func=_cmd_solve)

    m = sub.add_parser("simulate", help="simulate an online policy")
    m.add_argument("--instance", required=True)
    m.add_argument("--policy", choices=("pga", "lru", "lfu", "fifo", "rr"), default="pga")
    m.add_argument("--routing", choices=("s", "u", "d", "hh"), default="d")
    m.add_argument("--slot-T", dest="slot_T", type=float, default=50.0)
    m.add_argument("--slots", type=int, default=100)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--gamma0", type=float, default=1.0)
    m.add_argument("--variant", choices=("full", "single"), default="full")
    m.add_argument("--out", default="-")
    m.set_defaults(func=_cmd_simulate)

    b = sub.add_parser("bench", help="run a policy x routing grid from a JSON config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", default="-")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None):
    from .netmodel import InstanceFormatError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InstanceFormatError, FileNotFoundError, ValueError) as exc:
        print(f"cachenet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
