"""Compare the compiled RT-space kernel with its pure-Python twin.

    python3 benchmarks/bench_rtspace.py [--jobs 120] [--gpus 16] [--repeat 3]

Two workloads: raw ``place`` calls on a pre-filled cluster, and a full
Jigsaw planning pass over a synthetic trace. Both backends must produce the
same results; the script exits nonzero if they do not.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from spbsim import trace
from spbsim._kernel import IMPLEMENTATIONS, NEVER
from spbsim.scheduler import ClusterSpec, JigsawScheduler, SchedulerConfig


def _timed(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def place_workload(impl, n_machines=16, n_calls=20000, seed=0):
    rng = np.random.default_rng(seed)
    ready = rng.integers(0, 5_000_000, n_calls)
    dur = rng.integers(1_000, 200_000, n_calls)
    mem = rng.uniform(0.5, 8.0, n_calls)
    comp = rng.uniform(0.1, 1.0, n_calls)
    prev = rng.integers(-1, n_machines, n_calls)

    def go():
        tls = [impl.Timeline(m, 16.0) for m in range(n_machines)]
        res = []
        for i in range(n_calls):
            res.append(impl.place(tls, int(ready[i]), int(dur[i]), float(mem[i]), float(comp[i]),
                                  int(prev[i]), 50_000, NEVER))
        return res
    return go


def plan_workload(impl, jobs, gpus):
    def go():
        sched = JigsawScheduler(jobs, ClusterSpec(gpus), SchedulerConfig(), backend=impl)
        times = sorted({j.arrival_us for j in jobs})
        for i, t in enumerate(times):
            for idx, job in enumerate(jobs):
                if job.arrival_us == t:
                    sched.submit(idx, t)
            sched.schedule_interval(t, times[i + 1] if i + 1 < len(times) else NEVER)
        return sched.plan().makespan(), list(sched.finish)
    return go


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--jobs", type=int, default=120)
    ap.add_argument("--gpus", type=int, default=16)
    ap.add_argument("--calls", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if "compiled" not in IMPLEMENTATIONS:
        print("compiled kernel not built; only the Python twin is available")
    records = trace.generate(seed=3, n_jobs=args.jobs, mean_interarrival_s=20,
                             iters_range=(50, 300))
    jobs = trace.to_jobs(records)
    n_tasks = sum(j.k * j.total_iterations for j in jobs)

    results = {}
    print(f"{'workload':<22}{'backend':<10}{'seconds':>10}{'rate':>16}")
    for name, impl in IMPLEMENTATIONS.items():
        t, out = _timed(place_workload(impl, args.gpus, args.calls), args.repeat)
        results.setdefault("place", {})[name] = out
        print(f"{'place':<22}{name:<10}{t:>10.3f}{args.calls / t:>12.0f} /s")
        t, out = _timed(plan_workload(impl, jobs, args.gpus), args.repeat)
        results.setdefault("plan", {})[name] = out
        print(f"{'jigsaw plan':<22}{name:<10}{t:>10.3f}{n_tasks / t:>12.0f} /s")

    ok = all(len({repr(v) for v in r.values()}) == 1 for r in results.values())
    print("backends agree" if ok else "BACKENDS DISAGREE")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
