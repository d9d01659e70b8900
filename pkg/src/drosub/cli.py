"""Command line interface: ``drosub {chi2,data,solve,round,experiment}``.

Every command writes JSON with sorted keys, so identical inputs and seeds
give byte-identical output. Wall-clock times are only written when
``--record-time`` is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .chi2_core import Chi2Ball, linear_oracle, project
from .rounding import build_distribution, robust_set_value
from .solvers import MFWConfig, fw_plain, fw_smoothed, mfw, ogd_best_response
from .submodular import (FacilityObjective, format_live_edges, load_objective, robust_value,
                         save_facility_csv)


def _dump(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _read_vector(path: str) -> np.ndarray:
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    vals = [float(tok) for tok in text.split()]
    if not vals:
        raise ValueError(f"{path}: no values found")
    return np.array(vals)


def cmd_chi2(args) -> int:
    z = _read_vector(args.values)
    ball = Chi2Ball(args.rho, len(z))
    if args.op == "oracle":
        _dump(linear_oracle(z, ball).to_dict(), args.out)
    else:
        p = project(z, ball)
        _dump({"p": p.tolist(), "distance": float(np.linalg.norm(p - z)),
               "divergence": ball.divergence(p)}, args.out)
    return 0


def cmd_data(args) -> int:
    if args.op == "load":
        obj = load_objective(args.file, kind=args.kind)
        info = {"kind": obj.kind, "n": obj.n, "ground_size": obj.size, "B": obj.B, "b": obj.b}
        if obj.kind == "influence" and obj.regimes is not None:
            info["regime_counts"] = {str(r): int(c) for r, c in zip(*np.unique(obj.regimes, return_counts=True))}
        _dump(info, args.out)
        return 0
    rng = np.random.default_rng(args.seed)
    if args.kind == "facility":
        spec = harness.FacilitySpec(sparsity=args.sparsity, popularity=args.popularity, sigma=args.sigma)
        obj = FacilityObjective.from_samples(harness.gen_facility(args.size, args.n, spec, rng))
        save_facility_csv(obj, args.file)
    else:
        spec = harness.InfluenceSpec(q=args.q, p_low=args.p_low, p_high=args.p_high,
                                     graph=args.graph, edge_prob=args.edge_prob)
        graph = harness.synthetic_graph(args.size, spec, rng)
        samples = harness.gen_influence_mixture(graph, spec.q, spec.p_low, spec.p_high, args.n, rng, args.size)
        Path(args.file).write_text(format_live_edges(samples))
    return 0


def cmd_solve(args) -> int:
    obj = load_objective(args.data, kind=args.kind)
    ball = Chi2Ball(args.rho, obj.n)
    if args.alg == "ogd":
        run = ogd_best_response(obj, ball, args.T, k=args.k)
        out = run.to_dict(include_time=args.record_time)
        out["robust_value"] = robust_set_value(run.distribution, obj, ball)
    else:
        cfg = MFWConfig(T=args.T, batch_c=args.batch, k=args.k, seed=args.seed,
                        grad_samples=args.grad_samples, gradient=args.gradient)
        if args.alg == "mfw":
            run = mfw(obj, ball, cfg)
        elif args.alg == "fw":
            run = fw_plain(obj, ball, cfg)
        else:
            run = fw_smoothed(obj, ball, cfg, u=args.u, smoothing_samples=args.smoothing_samples)
        out = run.to_dict(include_time=args.record_time)
        out["robust_value"] = robust_value(obj, ball, run.x_final)[0]
    out["config"]["data"] = args.data
    out["config"]["seed"] = args.seed
    _dump(out, args.out)
    return 0


def cmd_round(args) -> int:
    run = json.loads(Path(args.x).read_text())
    if "x_final" not in run:
        raise ValueError(f"{args.x}: no x_final (OGD runs already hold a set distribution)")
    x = np.array(run["x_final"])
    k = int(args.k if args.k is not None else run["config"]["k"])
    dist = build_distribution(x, k, args.count, np.random.default_rng(args.seed))
    out = dist.to_dict()
    out.update({"k": k, "count": args.count, "seed": args.seed})
    data = args.data or run.get("config", {}).get("data")
    if data and Path(data).exists():
        obj = load_objective(data)
        rho = args.rho if args.rho is not None else run["config"]["rho"]
        out["robust_value"] = robust_set_value(dist, obj, Chi2Ball(rho, obj.n))
    _dump(out, args.out)
    return 0


def cmd_experiment(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    summary = harness.run_and_save(cfg, args.out, threads=args.threads)
    print(json.dumps({"out": str(args.out), "trials": summary["trials"]}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drosub", description="Chi-square DRO for stochastic submodular maximization")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chi2", help="linear oracle or projection for the chi-square ball")
    p.add_argument("op", choices=["oracle", "project"])
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--values", required=True, help="whitespace/newline separated reals, '-' for stdin")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_chi2)

    p = sub.add_parser("data", help="load or generate sample files")
    p.add_argument("op", choices=["load", "generate"])
    p.add_argument("file")
    p.add_argument("--kind", choices=["facility", "influence"], default=None)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=20, help="facilities or graph nodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sparsity", type=int, default=3)
    p.add_argument("--popularity", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--q", type=float, default=0.1)
    p.add_argument("--p-low", type=float, default=0.025)
    p.add_argument("--p-high", type=float, default=0.1)
    p.add_argument("--graph", choices=["er", "ws"], default="er")
    p.add_argument("--edge-prob", type=float, default=0.2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_data)

    p = sub.add_parser("solve", help="run a continuous solver or the OGD baseline")
    p.add_argument("--alg", choices=["mfw", "fw", "equator", "ogd"], default="mfw")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["facility", "influence"], default=None)
    p.add_argument("--gradient", choices=["sampled", "exact"], default="sampled")
    p.add_argument("--grad-samples", type=int, default=1)
    p.add_argument("--u", type=float, default=0.05)
    p.add_argument("--smoothing-samples", type=int, default=10)
    p.add_argument("--record-time", action="store_true", help="include wall time (breaks byte-identical reruns)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("round", help="swap-round a solver's fractional point")
    p.add_argument("--x", required=True, help="run.json written by solve")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_round)

    p = sub.add_parser("experiment", help="DRO versus ERM trials from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None, help=f"default: ${harness.THREADS_ENV} or all cores")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"drosub: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
