"""Command-line entry point: ``spbsim sim | verify | gen-trace``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import trace as trace_mod
from .cost_model import load_profiles
from .errors import (ConfigurationError, InstanceTooLargeError, TraceFormatError,
                     UnknownModelError)
from .scheduler import SchedulerConfig, canonical_policy
from .sim_engine import ClusterConfig, run, write_reports

DEFAULT_POLICIES = "jigsaw,gang,las,packing"
_GEN_KEYS = {"seed", "n", "interarrival", "mean_interarrival_s", "iters", "mix", "spb"}


def _parse_range(text: str) -> tuple[int, int]:
    for sep in (":", ",", "-"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            try:
                return int(lo), int(hi)
            except ValueError:
                break
    raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")


def _parse_gen(pairs: Sequence[str], args) -> dict:
    """``key=value`` pairs for the trace generator; CLI flags fill unset keys."""
    opts = {"seed": args.seed, "n_jobs": 500, "mean_interarrival_s": 30.0,
            "iters_range": args.iters_range, "worker_mix": trace_mod.DEFAULT_MIX, "spb": True}
    for pair in pairs:
        key, sep, val = pair.partition("=")
        key = key.strip()
        if not sep or key not in _GEN_KEYS:
            raise ConfigurationError(f"bad --gen-trace item {pair!r}; keys: {', '.join(sorted(_GEN_KEYS))}")
        try:
            if key == "seed":
                opts["seed"] = int(val)
            elif key == "n":
                opts["n_jobs"] = int(val)
            elif key in ("interarrival", "mean_interarrival_s"):
                opts["mean_interarrival_s"] = float(val)
            elif key == "iters":
                opts["iters_range"] = _parse_range(val)
            elif key == "mix":
                opts["worker_mix"] = tuple(float(v) for v in val.replace("/", ",").split(","))
            elif key == "spb":
                opts["spb"] = val.strip().lower() in ("1", "true", "yes")
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigurationError(f"bad --gen-trace item {pair!r}: {exc}") from None
    return opts


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spbsim", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True, metavar="{sim,verify,gen-trace}")

    def gen_flags(sp):
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        sp.add_argument("--iters-range", type=_parse_range, default=(50, 500), metavar="LO:HI",
                        help="iterations per generated job (default 50:500)")
        sp.add_argument("--profiles", type=Path, help="profile CSV (default: bundled table)")

    s = sub.add_parser("sim", help="simulate a trace under one or more policies")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--trace", type=Path, help="trace CSV to load")
    src.add_argument("--gen-trace", nargs="*", metavar="KEY=VAL",
                     help="generate a trace; keys: seed, n, interarrival, iters, mix, spb")
    s.add_argument("--gpus", type=int, default=45)
    s.add_argument("--mem-gb", type=float, default=16.0)
    s.add_argument("--policy", default=DEFAULT_POLICIES,
                   help=f"comma list from jigsaw, jigsaw-random, gang, las, packing "
                        f"(default {DEFAULT_POLICIES})")
    s.add_argument("--interval-s", type=float, default=60.0)
    s.add_argument("--gamma-ms-per-mb", type=float, default=0.8)
    s.add_argument("--out-dir", type=Path, default=Path("out"))
    s.add_argument("--plans", action="store_true", help="also write per-policy plan CSVs")
    s.add_argument("--validate", action="store_true",
                   help="check every executed plan against the schedule invariants")
    gen_flags(s)

    v = sub.add_parser("verify", help="run the SPB invariant suite")
    v.add_argument("--k", type=int, default=4)
    v.add_argument("--B", type=int, default=None, help="global batch (default 16k)")
    v.add_argument("--trials", type=int, default=10_000)
    v.add_argument("--t", type=int, default=5000, help="SGD iterations for the convergence check")
    v.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen-trace", help="write a synthetic trace CSV")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("items", nargs="*", metavar="KEY=VAL")
    gen_flags(g)

    o = sub.add_parser("oracle")
    o.add_argument("--instances", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    # hidden debugging aid
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle"]
    return p


def _cmd_sim(args) -> int:
    profiles = load_profiles(args.profiles)
    cfg = SchedulerConfig(interval_s=args.interval_s, gamma_ms_per_mb=args.gamma_ms_per_mb)
    cluster = ClusterConfig(args.gpus, args.mem_gb)
    policies = [canonical_policy(p) for p in args.policy.split(",") if p.strip()]
    if not policies:
        raise ConfigurationError("no policy given")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.trace is not None:
        jobs = trace_mod.load(args.trace, profiles)
    else:
        opts = _parse_gen(args.gen_trace or [], args)
        records = trace_mod.generate(models=profiles.names(), **opts)
        trace_mod.save(records, args.out_dir / "trace.csv")
        jobs = trace_mod.to_jobs(records, profiles)
    reports = []
    for name in policies:
        reports.append(run(jobs, cluster, name, cfg, seed=args.seed, validate=args.validate))
    write_reports(reports, args.out_dir, jobs, with_plan=args.plans)
    print(f"{'policy':<14}{'makespan_s':>14}{'mean_jct_s':>14}{'p95_jct_s':>14}{'failed':>8}")
    for r in reports:
        row = r.summary_row()
        print(f"{r.policy:<14}{row['makespan_us'] / 1e6:>14.3f}{row['mean_jct_us'] / 1e6:>14.3f}"
              f"{row['p95_jct_us'] / 1e6:>14.3f}{row['failed_jobs']:>8}")
    print(f"reports written to {args.out_dir}")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_suite
    if args.k < 1:
        raise ConfigurationError("--k must be >= 1")
    failed = 0

    def show(r):
        nonlocal failed
        failed += not r.passed
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}", flush=True)

    run_suite(args.k, args.B, args.trials, args.t, args.seed, progress=show)
    print("all checks passed" if not failed else f"{failed} check(s) failed")
    return 0 if not failed else 1


def _cmd_gen_trace(args) -> int:
    profiles = load_profiles(args.profiles)
    opts = _parse_gen(args.items, args)
    records = trace_mod.generate(models=profiles.names(), **opts)
    trace_mod.save(records, args.out)
    print(f"wrote {len(records)} jobs to {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    from .oracle import optimal_makespan, random_instance
    from .scheduler import ClusterSpec, plan_jobs, validate_schedule
    cfg = SchedulerConfig()
    worst = 0.0
    bad = 0
    for i in range(args.instances):
        jobs, nm = random_instance(args.seed + i)
        plan, _ = plan_jobs(jobs, ClusterSpec(nm), cfg)
        opt = optimal_makespan(jobs, ClusterSpec(nm), cfg, upper_bound=plan.makespan())
        ratio = plan.makespan() / opt.makespan
        viol = validate_schedule(plan, ClusterSpec(nm), jobs, cfg)
        bad += ratio < 1 or bool(viol)
        worst = max(worst, ratio)
        print(f"instance {args.seed + i}: machines={nm} jobs={len(jobs)} "
              f"jigsaw={plan.makespan()} optimum={opt.makespan} ratio={ratio:.3f} "
              f"violations={len(viol)}")
    print(f"worst ratio {worst:.3f}")
    return 1 if bad else 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {"sim": _cmd_sim, "verify": _cmd_verify, "gen-trace": _cmd_gen_trace,
               "oracle": _cmd_oracle}[args.cmd]
    try:
        return handler(args)
    except (ConfigurationError, TraceFormatError, InstanceTooLargeError, ValueError) as exc:
        print(f"spbsim: error: {exc}", file=sys.stderr)
        return 2
    except (UnknownModelError, FileNotFoundError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"spbsim: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
