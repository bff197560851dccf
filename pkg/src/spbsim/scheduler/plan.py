"""Columnar schedule storage, CSV export and the invariant checker."""
from __future__ import annotations

from array import array
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..ioutil import atomic_write_text
from .types import ClusterSpec, JobDag, SchedulerConfig

PLAN_COLUMNS = ("job_id", "worker_id", "iteration", "machine", "start_ms", "end_ms", "migrated")
# storage types of the seven plan columns; times are microseconds
COLUMN_DTYPES = (np.int32, np.int32, np.int32, np.int32, np.int64, np.int64, np.int8)


class PlanBuilder:
    """Append-only task log. Gang policies may log whole segments of iterations."""

    def __init__(self):
        self.job = array("i")
        self.worker = array("i")
        self.iteration = array("i")
        self.machine = array("i")
        self.start = array("q")
        self.end = array("q")
        self.migrated = array("b")
        # job, worker, first_iter, n_iters, machine, start, own, own_first, barrier_first, period
        self._seg = [array("q") for _ in range(10)]
        self._seg_migrated = array("b")
        self._blocks: list[list[np.ndarray]] = []

    def add(self, job, worker, iteration, machine, start, end, migrated):
        self.job.append(job)
        self.worker.append(worker)
        self.iteration.append(iteration)
        self.machine.append(machine)
        self.start.append(start)
        self.end.append(end)
        self.migrated.append(migrated)

    def extend_flat(self, rows) -> None:
        """Append rows given as a flat sequence of 7-tuples (job, worker, ..., migrated)."""
        a = np.asarray(rows, dtype=np.int64)
        if a.size:
            a = a.reshape(-1, 7)
            self._blocks.append([a[:, i].astype(dt) for i, dt in enumerate(COLUMN_DTYPES)])

    def add_segment(self, job, worker, first_iter, n_iters, machine, start,
                    own, own_first, barrier_first, period, migrated):
        """Log ``n_iters`` gang iterations of one worker starting at ``start``.

        Iteration 0 runs ``own_first`` (own length plus any migration
        surcharge) and the gang barrier releases after ``barrier_first``;
        later iterations start every ``period`` and run ``own``.
        """
        if n_iters <= 0:
            return
        for col, v in zip(self._seg, (job, worker, first_iter, n_iters, machine, start,
                                      own, own_first, barrier_first, period)):
            col.append(v)
        self._seg_migrated.append(migrated)

    def freeze(self) -> "Plan":
        parts = [[np.frombuffer(c, dtype=c.typecode).astype(dt) for c, dt in zip(
            (self.job, self.worker, self.iteration, self.machine, self.start, self.end,
             self.migrated), COLUMN_DTYPES)]]
        parts += self._blocks
        seg = [np.array(c, dtype=np.int64) for c in self._seg]
        if len(seg[0]):
            sj, sw, sfirst, sn, sm, ss, sown, sownf, sbar, sper = seg
            smig = np.array(self._seg_migrated, dtype=np.int64)
            rep = lambda a: np.repeat(a, sn)
            offs = np.arange(sn.sum()) - np.repeat(np.cumsum(sn) - sn, sn)
            first = offs == 0
            start = rep(ss) + np.where(first, 0, rep(sbar) + (offs - 1) * rep(sper))
            end = start + np.where(first, rep(sownf), rep(sown))
            extra = [rep(sj), rep(sw), rep(sfirst) + offs, rep(sm), start, end,
                     np.where(first, rep(smig), 0)]
            parts.append([c.astype(dt) for c, dt in zip(extra, COLUMN_DTYPES)])
        cols = [np.concatenate([p[i] for p in parts]) for i in range(7)]
        order = np.lexsort((cols[1], cols[2], cols[0], cols[4]))
        return Plan(*[c[order] for c in cols])


@dataclass
class Plan:
    job: np.ndarray
    worker: np.ndarray
    iteration: np.ndarray
    machine: np.ndarray
    start: np.ndarray
    end: np.ndarray
    migrated: np.ndarray

    def __len__(self):
        return len(self.job)

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "Plan":
        b = PlanBuilder()
        for r in rows:
            b.add(*r)
        return b.freeze()

    def rows(self):
        return list(zip(*(c.tolist() for c in (self.job, self.worker, self.iteration,
                                                 self.machine, self.start, self.end,
                                                 self.migrated))))

    def makespan(self) -> int:
        return int(self.end.max()) if len(self) else 0

    def job_finish(self, n_jobs: int) -> np.ndarray:
        out = np.full(n_jobs, -1, dtype=np.int64)
        np.maximum.at(out, self.job, self.end)
        return out

    def migrations_per_job(self, n_jobs: int) -> np.ndarray:
        return np.bincount(self.job, weights=self.migrated, minlength=n_jobs).astype(np.int64)

    def tasks_per_job(self, n_jobs: int) -> np.ndarray:
        return np.bincount(self.job, minlength=n_jobs).astype(np.int64)

    def to_csv(self, path, jobs: Sequence[JobDag]) -> None:
        atomic_write_text(path, self.csv_text(jobs))

    def csv_text(self, jobs: Sequence[JobDag]) -> str:
        ids = [j.job_id for j in jobs]
        lines = [",".join(PLAN_COLUMNS)]
        for j, w, it, m, s, e, mig in self.rows():
            lines.append(f"{ids[j]},{w},{it},{m},{fmt_ms(s)},{fmt_ms(e)},{mig}")
        return "\n".join(lines) + "\n"


def fmt_ms(us: int) -> str:
    sign = "-" if us < 0 else ""
    us = abs(int(us))
    return f"{sign}{us // 1000}.{us % 1000:03d}"


class Violation(NamedTuple):
    kind: str
    detail: str


def _demand_tables(jobs: Sequence[JobDag], cfg: SchedulerConfig):
    offset = np.zeros(len(jobs) + 1, dtype=np.int64)
    offset[1:] = np.cumsum([j.k for j in jobs])
    mem = np.concatenate([[d.peak_mem_gb for d in j.demands] for j in jobs]) if jobs else np.zeros(0)
    comp = np.concatenate([[d.compute_fraction for d in j.demands] for j in jobs]) if jobs else np.zeros(0)
    dur = np.concatenate([[j.duration_us(w) for w in range(j.k)] for j in jobs]).astype(np.int64) \
        if jobs else np.zeros(0, dtype=np.int64)
    sur = np.array([cfg.surcharge_us(j.model_size_mb) for j in jobs], dtype=np.int64)
    return offset, mem, comp, dur, sur


def validate_schedule(plan: Plan, cluster: ClusterSpec, jobs: Sequence[JobDag],
                      cfg: SchedulerConfig | None = None, exclude: Sequence[int] = (),
                      limit: int = 20) -> list[Violation]:
    """Check a complete plan; returns violations, never raises on a bad plan.

    (a) no memory/compute/co-residency oversubscription at any event point,
    (b) iteration i+1 of a job starts no earlier than the last end of iteration i,
        and no task starts before its job arrives,
    (c) every worker runs every iteration exactly once,
    (d) migrated flags and surcharges match the worker's previous machine.
    ``exclude`` lists job indices (e.g. failed jobs) skipped by check (c).
    """
    cfg = cfg or SchedulerConfig()
    out: list[Violation] = []
    n = len(plan)
    offset, mem, comp, dur, sur = _demand_tables(jobs, cfg)
    eps = 1e-6

    def report(kind, msgs):
        for msg in msgs[:limit]:
            out.append(Violation(kind, msg))

    if n:
        if plan.job.min() < 0 or plan.job.max() >= len(jobs):
            report("schema", ["job index out of range"])
            return out
        if plan.machine.min() < 0 or plan.machine.max() >= cluster.n_machines:
            report("schema", ["machine index out of range"])
            return out
        bad = np.nonzero((plan.worker < 0) | (plan.worker >= np.array([j.k for j in jobs])[plan.job]))[0]
        if bad.size:
            report("schema", [f"row {i}: worker out of range" for i in bad])
            return out
        if np.any(plan.end <= plan.start):
            report("schema", ["non-positive task length"])

    flat = offset[plan.job] + plan.worker if n else np.zeros(0, dtype=np.int64)

    # (a) capacity at every event point
    if n:
        t = np.concatenate([plan.start, plan.end])
        sign = np.concatenate([np.ones(n), -np.ones(n)])
        mach = np.concatenate([plan.machine, plan.machine])
        dm = np.concatenate([mem[flat], -mem[flat]])
        dc = np.concatenate([comp[flat], -comp[flat]])
        # ends sort before starts at the same instant
        order = np.lexsort((sign, t, mach))
        mach_s = mach[order]
        seg_start = np.r_[0, np.nonzero(np.diff(mach_s))[0] + 1]
        msgs = []
        caps = np.asarray(cluster.capacities)
        for a, b in zip(seg_start, np.r_[seg_start[1:], len(order)]):
            o = order[a:b]
            m = int(mach_s[a])
            um = np.cumsum(dm[o])
            uc = np.cumsum(dc[o])
            uk = np.cumsum(sign[o])
            over = (um > caps[m] + eps) | (uc > 1.0 + eps)
            if cfg.max_coresident:
                over |= uk > cfg.max_coresident
            for i in np.nonzero(over)[0][:limit]:
                msgs.append(f"machine {m} oversubscribed at t={int(t[o[i]])}us "
                            f"(mem {um[i]:.3f}/{caps[m]}, compute {uc[i]:.3f})")
        report("capacity", msgs)

    # (b) iteration barrier and arrival
    if n:
        arrivals = np.array([j.arrival_us for j in jobs], dtype=np.int64)
        early = np.nonzero(plan.start < arrivals[plan.job])[0]
        report("arrival", [f"job {jobs[plan.job[i]].job_id} task starts before arrival" for i in early])
        order = np.lexsort((plan.iteration, plan.job))
        jj, ii = plan.job[order], plan.iteration[order]
        brk = np.r_[0, np.nonzero((np.diff(jj) != 0) | (np.diff(ii) != 0))[0] + 1]
        gmin = np.minimum.reduceat(plan.start[order], brk)
        gmax = np.maximum.reduceat(plan.end[order], brk)
        gj, gi = jj[brk], ii[brk]
        nxt = (gj[1:] == gj[:-1]) & (gi[1:] == gi[:-1] + 1)
        bad = np.nonzero(nxt & (gmin[1:] < gmax[:-1]))[0]
        report("dependency", [f"job {jobs[gj[i]].job_id} iteration {gi[i] + 1} starts at "
                              f"{gmin[i + 1]} before iteration {gi[i]} ends at {gmax[i]}"
                              for i in bad])

    # (c) exactly once
    skip = set(exclude)
    msgs = []
    if n:
        order = np.lexsort((plan.iteration, plan.worker, plan.job))
        key = np.stack([plan.job[order], plan.worker[order], plan.iteration[order]])
        dup = np.nonzero(np.all(key[:, 1:] == key[:, :-1], axis=0))[0]
        msgs += [f"job {jobs[key[0, i]].job_id} worker {key[1, i]} iteration {key[2, i]} runs twice"
                 for i in dup]
    counts = np.bincount(flat, minlength=int(offset[-1])) if len(jobs) else np.zeros(0)
    for ji, job in enumerate(jobs):
        if ji in skip:
            continue
        for w in range(job.k):
            c = int(counts[offset[ji] + w]) if counts.size else 0
            if c != job.total_iterations:
                msgs.append(f"job {job.job_id} worker {w} ran {c} of {job.total_iterations} iterations")
        if n:
            its = plan.iteration[plan.job == ji]
            if its.size and (its.min() < 1 or its.max() > job.total_iterations):
                msgs.append(f"job {job.job_id} has iteration outside 1..{job.total_iterations}")
    report("coverage", msgs)

    # (d) migration bookkeeping
    if n:
        order = np.lexsort((plan.iteration, flat))
        f = flat[order]
        m = plan.machine[order]
        same_worker = np.r_[False, f[1:] == f[:-1]]
        prev_m = np.r_[-1, m[:-1]]
        expect = same_worker & (prev_m != m)
        got = plan.migrated[order].astype(bool)
        length = plan.end[order] - plan.start[order]
        want = dur[f] + np.where(expect, sur[plan.job[order]], 0)
        bad = np.nonzero((expect != got) | (length != want))[0]
        report("migration", [f"job {jobs[plan.job[order][i]].job_id} worker {plan.worker[order][i]} "
                             f"iteration {plan.iteration[order][i]}: migrated={bool(got[i])} "
                             f"expected={bool(expect[i])}, length {length[i]} expected {want[i]}"
                             for i in bad])
    return out
