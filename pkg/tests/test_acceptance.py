"""Acceptance criteria, one check per criterion at its stated tolerance.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly
(``python3 tests/test_acceptance.py``); either way one PASS/FAIL line is
printed per criterion.
"""
from __future__ import annotations

import gc
import math
import os
import subprocess
import sys
import tempfile
import time
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import fig2_jobs  # noqa: E402
from spbsim import spb_core as sc  # noqa: E402
from spbsim import trace  # noqa: E402
from spbsim.cost_model import backward_time, forward_time, load_profiles, peak_memory  # noqa: E402
from spbsim.oracle import optimal_makespan, random_instance, variance_oracle  # noqa: E402
from spbsim.scheduler import (ClusterSpec, SchedulerConfig, gang_fifo, plan_jobs,  # noqa: E402
                              validate_schedule)
from spbsim.sim_engine import ClusterConfig, quantile, run  # noqa: E402
from spbsim.verify import variance_point  # noqa: E402

RESULTS: list[str] = []

# The 480-job workload: default arrival rate and worker mix, with jobs long
# enough that the cluster is congested (see README).
TRACE_ARGS = dict(seed=7, n_jobs=480, mean_interarrival_s=30.0, iters_range=(4000, 12000))


def report(n: int, title: str, passed: bool, detail: str) -> bool:
    line = f"criterion {n} {'PASS' if passed else 'FAIL'}: {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


@lru_cache(maxsize=None)
def _jobs():
    return tuple(trace.to_jobs(trace.generate(**TRACE_ARGS)))


class _Summary(NamedTuple):
    makespan: int
    failed: list
    migration_fraction: np.ndarray


@lru_cache(maxsize=None)
def _run(gpus: int, policy: str):
    # keep only the numbers; a full plan of this trace is several hundred MB
    t0 = time.perf_counter()
    r = run(list(_jobs()), ClusterConfig(gpus), policy, SchedulerConfig(), seed=0)
    out = _Summary(r.makespan, r.failed, r.migration_fraction)
    del r
    gc.collect()
    return out, time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------
def criterion_1() -> bool:
    ok, parts = True, []
    for gpus in (35, 45):
        ms = {}
        for p in ("jigsaw", "las", "packing"):
            r, secs = _run(gpus, p)
            ms[p] = r.makespan
            ok &= secs < 120 and not r.failed
            parts.append(f"{p}@{gpus}={r.makespan / 3.6e9:.2f}h ({secs:.0f}s)")
        for base in ("las", "packing"):
            gain = 1 - ms["jigsaw"] / ms[base]
            ok &= gain >= 0.10
            parts.append(f"gain vs {base}@{gpus}={gain:.1%}")
    return report(1, "makespan ordering, >=10% vs LAS and packing", ok, "; ".join(parts))


# 2 ---------------------------------------------------------------------------
def criterion_2() -> bool:
    jobs = fig2_jobs()
    cl = ClusterSpec(3)
    jig, _ = plan_jobs(jobs, cl)
    gang = gang_fifo(jobs, cl, full_backprop=False)
    dev = next(r[3] for r in gang.rows() if r[0] == 0 and r[1] == 0)
    idle = (min(r[4] for r in gang.rows() if r[0] == 1 and r[3] == dev)
            - max(r[5] for r in gang.rows() if r[0] == 0 and r[3] == dev))
    job2 = min(r[4] for r in jig.rows() if r[0] == 1)
    ok = (idle >= 700_000 and job2 == 300_000 and jig.makespan() < gang.makespan()
          and validate_schedule(jig, cl, jobs) == [] and validate_schedule(gang, cl, jobs) == [])
    return report(2, "two-job example", ok,
                  f"gang idle before Job2 {idle / 1e6:.1f}s, jigsaw Job2 start {job2 / 1e6:.1f}s, "
                  f"makespan jigsaw {jig.makespan() / 1e6:.1f}s < gang {gang.makespan() / 1e6:.1f}s")


# 3 ---------------------------------------------------------------------------
def criterion_3() -> bool:
    t0 = time.perf_counter()
    model = sc.make_convex_quadratic(seed=0)
    x = variance_point(model)
    ok, parts = True, []
    for k in (2, 4, 8):
        B = 16 * k
        cfg = sc.SpbConfig(k=k, B=B)
        est = sc.empirical_variance(model, cfg, 10_000, seed=k, x=x)
        orc = variance_oracle(model, cfg, x=x, trials=10_000, seed=k)
        lb, sb = sc.minibatch_bound(est.P, k, B), sc.spb_bound(est.P, k, B)
        c1 = est.baseline_mean - 3 * est.baseline_se <= lb
        c2 = est.spb_mean - 3 * est.spb_se <= sb
        se = math.hypot(est.spb_se, orc.harmonic_se)
        c3 = abs(est.spb_mean - orc.harmonic) <= 3 * se
        ok &= c1 and c2 and c3
        parts.append(f"k={k}: base {est.baseline_mean:.3g}<= {lb:.3g}, spb {est.spb_mean:.3g}<="
                     f" {sb:.3g}, harmonic {orc.harmonic:.3g} (|diff| {abs(est.spb_mean - orc.harmonic):.2g}"
                     f" <= 3SE {3 * se:.2g})")
    secs = time.perf_counter() - t0
    ok &= secs < 30
    return report(3, "variance bounds", ok, "; ".join(parts) + f"; {secs:.1f}s")


# 4 ---------------------------------------------------------------------------
def criterion_4() -> bool:
    t0 = time.perf_counter()
    model = sc.make_convex_quadratic(seed=0)
    traj = sc.spb_sgd_run(model, sc.SpbConfig(k=4, B=64), 5000, schedule="theorem1", seed=0)
    bound_ok = traj.final_suboptimality <= traj.bound()
    # iterations to a fixed loss, same global batch, mean over seeds of the last iterate
    curves = {}
    for k in (4, 8):
        cfg = sc.SpbConfig(k=k, B=64, lr_base=0.05)
        curves[k] = np.mean([sc.spb_sgd_run(model, cfg, 2000, "constant", seed=s).last_suboptimality
                             for s in range(8)], axis=0)
    target = 2.0 * curves[4][1000:].mean()
    hit = {k: int(np.argmax(c <= target)) + 1 if (c <= target).any() else len(c) + 1
           for k, c in curves.items()}
    secs = time.perf_counter() - t0
    ok = bound_ok and hit[8] >= hit[4] and secs < 60
    return report(4, "convergence bound and worker trend", ok,
                  f"suboptimality {traj.final_suboptimality:.3g} <= bound {traj.bound():.3g}; "
                  f"iterations to {target:.3g}: k=4 {hit[4]}, k=8 {hit[8]}; {secs:.1f}s")


# 5 ---------------------------------------------------------------------------
TABLE1 = [(0.05, 34.64, 3.56, 2.9), (0.1, 34.86, 8.35, 3.1), (0.2, 34.84, 16.34, 3.3),
          (0.3, 34.67, 23.02, 3.5), (0.4, 34.61, 29.93, 3.8), (0.5, 34.70, 36.58, 4.1),
          (0.6, 34.72, 43.74, 4.3), (0.7, 34.61, 49.92, 4.6), (0.8, 34.71, 58.86, 5.1),
          (0.9, 34.85, 70.24, 5.7), (1.0, 34.79, 79.89, 6.5)]
TABLE2 = {"ResNet18": (9.19, 21.49, 2.46), "ResNet34": (16.11, 36.69, 3.08),
          "ResNet50": (36.32, 78.9, 7.33), "ResNet101-b128": (60.51, 135.14, 9.79),
          "ResNet152": (86.9, 197.05, 12.81), "VGG19": (6.82, 16.31, 2.02),
          "VGG16": (5.68, 13.96, 1.97), "VGG11": (3.34, 7.8, 1.83),
          "GoogleNet": (41.33, 99.17, 5.96)}


def criterion_5() -> bool:
    prof = load_profiles()
    bad = []
    e = prof["ResNet101"]
    for f, fw, bw, mem in TABLE1:
        if (forward_time(e, f), backward_time(e, f), peak_memory(e, f)) != (fw, bw, mem):
            bad.append(f"ResNet101@{f}")
    for name, (fw, bw, mem) in TABLE2.items():
        e2 = prof[name]
        if (forward_time(e2, 1.0), backward_time(e2, 1.0), peak_memory(e2, 1.0)) != (fw, bw, mem):
            bad.append(name)
    n = len(TABLE1) + len(TABLE2)
    return report(5, "cost-model knots", not bad,
                  f"{n - len(bad)}/{n} knots exact" + (f"; mismatched {bad}" if bad else ""))


# 6 ---------------------------------------------------------------------------
def criterion_6() -> bool:
    cfg = SchedulerConfig()
    below = within = invalid = 0
    worst = 0.0
    for seed in range(100):
        jobs, nm = random_instance(seed)
        plan, _ = plan_jobs(jobs, ClusterSpec(nm), cfg)
        opt = optimal_makespan(jobs, nm, cfg, upper_bound=plan.makespan())
        ratio = plan.makespan() / opt.makespan
        worst = max(worst, ratio)
        below += ratio < 1
        within += ratio <= 1.5
        invalid += bool(validate_schedule(plan, ClusterSpec(nm), jobs, cfg))
    ok = below == 0 and within >= 95 and invalid == 0
    return report(6, "oracle gap", ok,
                  f"{within}/100 within 1.5x, worst {worst:.3f}, below optimum {below}, "
                  f"invalid plans {invalid}")


# 7 ---------------------------------------------------------------------------
def criterion_7() -> bool:
    jig, _ = _run(35, "jigsaw")
    rnd, _ = _run(35, "jigsaw-random")
    ok, parts = True, []
    for q in (0.5, 0.9, 0.99):
        a, b = quantile(jig.migration_fraction, q), quantile(rnd.migration_fraction, q)
        ok &= a <= b
        parts.append(f"p{int(q * 100)} {a:.4f} <= {b:.4f}")
    return report(7, "migration fraction, jigsaw vs random placement", ok, "; ".join(parts))


# 8 ---------------------------------------------------------------------------
def criterion_8() -> bool:
    cmds = [
        ["sim", "--gen-trace", "seed=7", "n=480", "--gpus", "35",
         "--policy", "jigsaw,gang,las,packing,jigsaw-random", "--plans"],
        ["gen-trace", "--out", "{d}/trace.csv", "seed=7", "n=480"],
        ["verify", "--k", "2", "--trials", "2000", "--t", "500"],
    ]
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in ("a", "b"):
            d = Path(tmp) / rep
            d.mkdir()
            stdout = []
            for c in cmds:
                argv = [a.replace("{d}", str(d)) for a in c]
                if argv[0] == "sim":
                    argv += ["--out-dir", str(d)]
                res = subprocess.run([sys.executable, "-m", "spbsim", *argv], capture_output=True,
                                     text=True)
                stdout.append((res.returncode, res.stdout.replace(str(d), "<d>")))
            files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
            outs.append((files, stdout))
    same = outs[0] == outs[1]
    codes = [c for c, _ in outs[0][1]]
    ok = same and codes == [0, 0, 0] and len(outs[0][0]) >= 5
    return report(8, "CLI determinism", ok,
                  f"{len(outs[0][0])} files and stdout of {len(cmds)} commands byte-identical: "
                  f"{same}; exit codes {codes}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 9)])
def test_acceptance(criterion, capsys):
    with capsys.disabled():
        passed = criterion()
    assert passed, RESULTS[-1]


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
