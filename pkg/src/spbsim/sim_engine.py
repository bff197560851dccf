"""Discrete-event cluster simulator and run metrics.

Events are ordered by (time, kind, sequence) with task completions first,
then scheduling ticks, then arrivals, so capacity freed at an instant is
visible to a decision made at that instant. All times are integer
microseconds.

Task durations are deterministic, so the executed history equals the
committed plan; only job completions are materialized as ``task_finish``
events (they drive the gang policies' decisions and JCT bookkeeping).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .ioutil import atomic_write_text
from .scheduler import ClusterSpec, JobDag, SchedulerConfig, make_policy
from .scheduler.plan import Plan, fmt_ms, validate_schedule

TASK_FINISH, SCHED_TICK, JOB_ARRIVAL = 0, 1, 2
EVENT_KINDS = {TASK_FINISH: "task_finish", SCHED_TICK: "sched_tick", JOB_ARRIVAL: "job_arrival"}


@dataclass(frozen=True)
class ClusterConfig:
    num_gpus: int = 45
    mem_per_gpu_gb: float = 16.0

    def __post_init__(self):
        if self.num_gpus < 1:
            raise ConfigurationError("num_gpus must be >= 1")
        if self.mem_per_gpu_gb <= 0:
            raise ConfigurationError("mem_per_gpu_gb must be positive")

    def spec(self) -> ClusterSpec:
        return ClusterSpec(self.num_gpus, self.mem_per_gpu_gb)


@dataclass(frozen=True, order=True)
class Event:
    time: int
    kind: int
    seq: int
    payload: tuple = field(default=(), compare=False)


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0

    def push(self, time: int, kind: int, payload: tuple = ()) -> None:
        heapq.heappush(self._heap, Event(time, kind, self._seq, payload))
        self._seq += 1

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek(self) -> Event:
        return self._heap[0]

    def __bool__(self):
        return bool(self._heap)


def drive(policy, jobs: Sequence[JobDag], log: list | None = None) -> list[int]:
    """Feed arrivals, periodic ticks and completions to ``policy`` until idle.

    Returns the per-job finish time (-1 for jobs that never finished).
    """
    q = EventQueue()
    for j, job in enumerate(jobs):
        q.push(job.arrival_us, JOB_ARRIVAL, (j,))
    interval = policy.cfg.interval_us
    finish = [-1] * len(jobs)
    next_tick = None
    while q:
        ev = q.pop()
        t = ev.time
        if log is not None:
            log.append((t, EVENT_KINDS[ev.kind], ev.payload))
        if ev.kind == TASK_FINISH:
            j, token = ev.payload
            if policy.on_finish(j, token, t):
                finish[j] = t
        elif ev.kind == SCHED_TICK:
            if t != next_tick:
                continue
            next_tick = None
            policy.tick(t)
        else:
            # every job arriving at this instant is submitted, then one tick is forced
            policy.submit(ev.payload[0], t)
            while q and q.peek().time == t and q.peek().kind == JOB_ARRIVAL:
                ev = q.pop()
                if log is not None:
                    log.append((t, EVENT_KINDS[ev.kind], ev.payload))
                policy.submit(ev.payload[0], t)
            if log is not None:
                log.append((t, EVENT_KINDS[SCHED_TICK], ()))
            policy.tick(t)
        for ft, fj, tok in policy.drain_completions():
            q.push(ft, TASK_FINISH, (fj, tok))
        if next_tick is None and policy.active():
            next_tick = (t // interval + 1) * interval
            q.push(next_tick, SCHED_TICK)
    return finish


@dataclass
class MetricsReport:
    policy: str
    job_ids: list[str]
    arrival: np.ndarray
    finish: np.ndarray
    migrations: np.ndarray
    worker_iterations: np.ndarray
    failed: list[int]
    plan: Plan
    n_machines: int
    interval_us: int

    @property
    def completed(self) -> np.ndarray:
        return self.finish >= 0

    @property
    def makespan(self) -> int:
        done = self.finish[self.completed]
        return int(done.max()) if done.size else 0

    @property
    def jct(self) -> np.ndarray:
        c = self.completed
        return self.finish[c] - self.arrival[c]

    @property
    def migration_fraction(self) -> np.ndarray:
        c = self.completed
        return self.migrations[c] / self.worker_iterations[c]

    def jct_percentile(self, q: float) -> int:
        """Nearest-rank percentile of the JCTs."""
        v = np.sort(self.jct)
        if not v.size:
            return 0
        r = max(1, math.ceil(q / 100 * v.size))
        return int(v[r - 1])

    def utilization(self, bucket_us: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(bucket start times, busy fraction[machine, bucket])."""
        b = bucket_us or self.interval_us
        nb = max(1, -(-self.makespan // b))
        busy = np.zeros((self.n_machines, nb))
        p = self.plan
        if len(p):
            # busy time of a machine counts each instant once even if tasks overlap
            for m in range(self.n_machines):
                sel = p.machine == m
                if not sel.any():
                    continue
                s, e = _union(p.start[sel], p.end[sel])
                busy[m] = _bucket_sum(s, e, b, nb)
        return np.arange(nb, dtype=np.int64) * b, busy / b

    def summary_row(self) -> dict:
        jct = self.jct
        return {"policy": self.policy, "makespan_us": self.makespan,
                "mean_jct_us": int(round(float(jct.mean()))) if jct.size else 0,
                "p50_jct_us": self.jct_percentile(50), "p95_jct_us": self.jct_percentile(95),
                "failed_jobs": len(self.failed)}


def _union(start, end):
    o = np.argsort(start, kind="stable")
    s, e = start[o], end[o]
    run_end = np.maximum.accumulate(e)
    new = np.r_[True, s[1:] > run_end[:-1]]
    idx = np.nonzero(new)[0]
    ends = np.maximum.reduceat(e, idx)
    return s[idx], ends


def _bucket_sum(s, e, b, nb):
    """Covered length of disjoint sorted intervals [s, e) in each bucket of width ``b``."""
    edges = np.arange(nb + 1, dtype=np.int64) * b
    prefix = np.r_[0, np.cumsum(e - s)]
    k = np.searchsorted(s, edges, side="right")
    last = np.maximum(k - 1, 0)
    partial = np.where(k > 0, np.minimum(edges, e[last]) - s[last], 0)
    covered = np.where(k > 0, prefix[last] + partial, 0)
    return np.diff(covered).astype(float)


def run(trace: Sequence[JobDag], cluster: ClusterConfig, policy: str,
        cfg: SchedulerConfig | None = None, seed: int = 0, validate: bool = False,
        events: list | None = None) -> MetricsReport:
    """Simulate ``trace`` under ``policy`` and collect metrics.

    Jobs whose memory fits no GPU are reported as failures; the run continues.
    """
    cfg = cfg or SchedulerConfig()
    spec = cluster.spec()
    jobs = list(trace)
    if any(b.arrival_us < a.arrival_us for a, b in zip(jobs, jobs[1:])):
        raise ConfigurationError("trace must be sorted by arrival")
    sched = make_policy(policy, jobs, spec, cfg, seed=seed)
    finish = drive(sched, jobs, events)
    plan = sched.plan()
    failed = sorted(set(sched.failed))
    n = len(jobs)
    finish_arr = np.array(finish, dtype=np.int64)
    for j in failed:
        finish_arr[j] = -1
    if validate:
        bad = validate_schedule(plan, spec, sched.jobs, cfg, exclude=failed)
        if bad:
            raise AssertionError(f"{policy}: executed history violates invariants: {bad[:3]}")
    return MetricsReport(
        policy=policy, job_ids=[j.job_id for j in jobs],
        arrival=np.array([j.arrival_us for j in jobs], dtype=np.int64), finish=finish_arr,
        migrations=plan.migrations_per_job(n), worker_iterations=np.array(
            [j.k * j.total_iterations for j in jobs], dtype=np.int64),
        failed=failed, plan=plan, n_machines=spec.n_machines, interval_us=cfg.interval_us)


def cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative fraction) steps; one point per distinct value."""
    v = np.sort(np.asarray(values))
    if not v.size:
        return []
    uniq = np.unique(v)
    counts = np.searchsorted(v, uniq, side="right")
    return [(x.item(), c / v.size) for x, c in zip(uniq, counts)]


def jct_cdf(report: MetricsReport) -> list[tuple[int, float]]:
    return cdf(report.jct)


def migration_cdf(report: MetricsReport) -> list[tuple[float, float]]:
    return cdf(report.migration_fraction)


def quantile(values, q: float) -> float:
    """Nearest-rank quantile, q in (0, 1]."""
    v = np.sort(np.asarray(values))
    if not v.size:
        return 0.0
    return float(v[max(1, math.ceil(q * v.size)) - 1])


# -- CSV writers ------------------------------------------------------------
SUMMARY_COLUMNS = ("policy", "makespan_us", "mean_jct_us", "p50_jct_us", "p95_jct_us",
                   "failed_jobs")


def summary_csv(reports: Sequence[MetricsReport]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in reports:
        row = r.summary_row()
        lines.append(",".join(str(row[c]) for c in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


def _cdf_csv(reports, fn, value_name, fmt) -> str:
    lines = [f"policy,{value_name},cum_fraction"]
    for r in reports:
        for v, c in fn(r):
            lines.append(f"{r.policy},{fmt(v)},{c:.6f}")
    return "\n".join(lines) + "\n"


def jct_cdf_csv(reports) -> str:
    return _cdf_csv(reports, jct_cdf, "jct_us", lambda v: str(int(v)))


def migration_cdf_csv(reports) -> str:
    return _cdf_csv(reports, migration_cdf, "migration_fraction", lambda v: f"{v:.6f}")


def util_csv(reports) -> str:
    lines = ["policy,machine,time_us,busy_fraction"]
    for r in reports:
        times, busy = r.utilization()
        for m in range(r.n_machines):
            for t, f in zip(times.tolist(), busy[m].tolist()):
                lines.append(f"{r.policy},{m},{t},{f:.6f}")
    return "\n".join(lines) + "\n"


def write_reports(reports: Sequence[MetricsReport], out_dir, jobs=None,
                  with_plan: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"summary.csv": summary_csv(reports), "jct_cdf.csv": jct_cdf_csv(reports),
             "migration_cdf.csv": migration_cdf_csv(reports), "util.csv": util_csv(reports)}
    paths = []
    for name, text in files.items():
        atomic_write_text(out / name, text)
        paths.append(out / name)
    if with_plan and jobs is not None:
        for r in reports:
            p = out / f"plan_{r.policy}.csv"
            r.plan.to_csv(p, jobs)
            paths.append(p)
    return paths


__all__ = ["ClusterConfig", "Event", "EventQueue", "MetricsReport", "run", "drive", "jct_cdf",
           "migration_cdf", "cdf", "quantile", "summary_csv", "write_reports", "fmt_ms"]
