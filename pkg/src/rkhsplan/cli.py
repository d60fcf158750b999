"""Command-line entry point: reduce, plan, benchmark, mpc, scenario validate."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import RunConfig, mpc_drive, planning_setup, run_sweep, _scene_inputs, joint_collision_rate
from .optimizer import RISK_TAGS, plan
from .reduced_set import CemConfig, reduce
from .risk import ObstacleSampleSet
from .scenarios import CONFIG_ENV, ScenarioError, list_presets, validate_file


def _seeds(text: str):
    """'0,1,5' or '0-19' or a mix: '0-4,10'."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return tuple(out)


def _run_config(args) -> RunConfig:
    return RunConfig(
        scenario=args.scenario,
        risk=args.risk,
        n_prime=args.n_prime,
        seeds=args.seeds,
        n_opt=args.n_opt,
        n_val=args.n_val,
        baseline_uses_reduced_set=args.baseline_uses_reduced_set,
        random_reduced_set=args.random_reduced_set,
        risk_weight=args.risk_weight,
        out_dir=args.out,
    )


def _common(p, multi=False):
    p.add_argument("--scenario", required=True,
                   help=f"scenario JSON path or preset name (looked up in ${CONFIG_ENV})")
    if multi:
        p.add_argument("--risk", default=["mmd"], nargs="+", choices=RISK_TAGS)
        p.add_argument("--n-prime", default=[5], type=int, nargs="+")
    else:
        p.add_argument("--risk", default="mmd", choices=RISK_TAGS)
        p.add_argument("--n-prime", default=5, type=int)
    p.add_argument("--seeds", default=(0,), type=_seeds, help="e.g. 0-19 or 0,3,7")
    p.add_argument("--n-opt", default=100, type=int)
    p.add_argument("--n-val", default=10000, type=int)
    p.add_argument("--risk-weight", default=None, type=float,
                   help="risk multiplier (default depends on the risk tag)")
    p.add_argument("--baseline-uses-reduced-set", action="store_true",
                   help="feed the optimized reduced set (uniform weights) to SAA/CVaR/scenario")
    p.add_argument("--random-reduced-set", action="store_true",
                   help="MMD on a uniformly random subset instead of the optimized one")
    p.add_argument("--out", default=None, help="output directory")


def cmd_reduce(args):
    data = json.loads(Path(args.samples).read_text())
    O = ObstacleSampleSet(np.asarray(data["samples"], dtype=float), float(data["dt"]))
    rs = reduce(O, args.n_prime, CemConfig(seed=args.seed))
    text = json.dumps(rs.to_dict())
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(f"reduced {O.N} -> {rs.n_prime} rows, gap {rs.gap:.6g}, sigma {rs.sigma:.6g}",
          file=sys.stderr)
    return 0


def cmd_plan(args):
    cfg = _run_config(args)
    seed = cfg.seeds[0]
    spec = cfg.load_scenario()
    chosen, vals, t_reduce = _scene_inputs(spec, cfg, seed)
    risk, opt, weights, cons = planning_setup(spec, cfg, seed)
    res = plan(spec.ego.bc, chosen, risk, opt, weights, cons, cfg.params, spec.curvature())
    out = {
        "scenario": spec.name, "risk": cfg.risk, "n_prime": cfg.n_prime, "seed": seed,
        "behavior": [res.behavior.b_d, res.behavior.b_v],
        "cost": res.cost, "risk_value": res.risk, "residual_norm": res.residual_norm,
        "collision_rate": joint_collision_rate(res.trajectory, vals, cfg.params),
        "reduce_time": t_reduce,
        "s": res.trajectory.s.tolist(), "d": res.trajectory.d.tolist(),
        "trace": res.trace,
    }
    text = json.dumps(out)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "plan.json").write_text(text + "\n")
    print(json.dumps({k: v for k, v in out.items() if k not in ("s", "d", "trace")}))
    return 0


def cmd_benchmark(args):
    base = _run_config(argparse.Namespace(**{**vars(args), "risk": args.risk[0],
                                             "n_prime": args.n_prime[0]}))
    report = run_sweep(base, risks=args.risk, n_primes=args.n_prime, workers=args.workers,
                       out_dir=args.out)
    for agg in report.aggregates:
        c = agg["collision_rate"]
        med = "nan" if c["median"] is None else f"{c['median']:.4f}"
        print(f"{agg['scenario']:<24} {agg['risk']:<9} {agg['selection']:<8} "
              f"N'={agg['n_prime']:<3} median={med} failed={agg['n_failed']}")
    return 0


def cmd_mpc(args):
    cfg = _run_config(args)
    log = mpc_drive(cfg, args.cycles)
    text = log.to_jsonl()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "mpc.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args):
    status = 0
    for path in args.paths:
        try:
            spec = validate_file(path)
            print(f"ok      {path} ({spec.kind}, {spec.name})")
        except (ScenarioError, FileNotFoundError, ValueError) as exc:
            print(f"invalid {path}: {exc}")
            status = 1
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="rkhsplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reduce", help="compress an obstacle sample set to a weighted reduced set")
    r.add_argument("samples", help="JSON with 'samples' (N x 2H) and 'dt'")
    r.add_argument("--n-prime", type=int, default=5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_reduce)

    pl = sub.add_parser("plan", help="plan once on a single seeded scene")
    _common(pl)
    pl.set_defaults(fn=cmd_plan)

    b = sub.add_parser("benchmark", help="sweep risks x N' x seeds, write CSV + JSON")
    _common(b, multi=True)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(fn=cmd_benchmark)

    m = sub.add_parser("mpc", help="receding-horizon drive")
    _common(m)
    m.add_argument("--cycles", type=int, default=20)
    m.set_defaults(fn=cmd_mpc)

    s = sub.add_parser("scenario", help="scenario utilities")
    ssub = s.add_subparsers(dest="scenario_command", required=True)
    v = ssub.add_parser("validate", help="schema-check scenario files")
    v.add_argument("paths", nargs="*")
    v.set_defaults(fn=cmd_validate)
    ls = ssub.add_parser("list", help="list presets in the config directory")
    ls.set_defaults(fn=lambda a: print("\n".join(list_presets())) or 0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenario" and args.scenario_command == "validate" and not args.paths:
        args.paths = [str(p) for p in sorted(Path(_preset_dir()).glob("*.json"))]
    return args.fn(args)


def _preset_dir():
    from .scenarios import config_dir
    return config_dir()


if __name__ == "__main__":
    sys.exit(main())
