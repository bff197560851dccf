"""Gang-scheduling baselines: FIFO, least attained service and first-fit-decreasing packing.

Jobs are scheduled whole: all ``k`` workers hold one dedicated GPU each and
advance in lock-step, so one iteration lasts as long as the slowest worker.
By default every worker does full backprop, because per-worker demands
cannot differ under gang allocation. LAS preempts at iteration boundaries; a
worker that resumes on a different GPU pays the migration surcharge on its
first iteration there.
"""
from __future__ import annotations

from typing import Sequence

from .plan import Plan, PlanBuilder
from .types import ClusterSpec, JobDag, SchedulerConfig

POLICIES = ("gang_fifo", "las", "packing")


class _Run:
    __slots__ = ("start", "n", "barrier_first", "period", "machines", "own_first",
                 "finish", "saved_free")

    def __init__(self, start, n, barrier_first, period, machines, own_first, saved_free):
        self.start = start
        self.n = n
        self.barrier_first = barrier_first
        self.period = period
        self.machines = machines
        self.own_first = own_first
        self.finish = start + barrier_first + (n - 1) * period
        self.saved_free = saved_free

    def boundary(self, i):
        """End of the i-th iteration of this run (i >= 1)."""
        return self.start + self.barrier_first + (i - 1) * self.period


class GangScheduler:
    """Event-driven gang policy. ``mode`` is one of ``POLICIES``."""

    def __init__(self, jobs: Sequence[JobDag], cluster: ClusterSpec,
                 cfg: SchedulerConfig | None = None, mode: str = "gang_fifo",
                 full_backprop: bool = True):
        if mode not in POLICIES:
            raise ValueError(f"unknown gang policy {mode!r}")
        self.mode = mode
        self.name = {"gang_fifo": "gang"}.get(mode, mode)
        self.cfg = cfg or SchedulerConfig()
        self.jobs = [j.without_spb() for j in jobs] if full_backprop else list(jobs)
        self.cluster = cluster
        n, nm = len(self.jobs), cluster.n_machines
        self.free_at = [0] * nm
        self.holder = [-1] * nm
        self.plan_log = PlanBuilder()
        self._dur = [[j.duration_us(w) for w in range(j.k)] for j in self.jobs]
        self._tau = [max(d) for d in self._dur]
        self._sur = [self.cfg.surcharge_us(j.model_size_mb) for j in self.jobs]
        self._prev = [[-1] * j.k for j in self.jobs]
        self._done = [0] * n
        self._service = [0] * n
        self._version = [0] * n
        self._runs: dict[int, _Run] = {}
        self._waiting: list[int] = []
        self._completions: list[tuple[int, int, int]] = []
        self.finish = [-1] * n
        self.failed: list[int] = []

    # -- policy interface ---------------------------------------------------
    def submit(self, job: int, now: int) -> None:
        spec = self.jobs[job]
        caps = self.cluster.capacities
        fits = sum(1 for c in caps if max(d.peak_mem_gb for d in spec.demands) <= c + 1e-9)
        if spec.k > fits:
            self.failed.append(job)
            return
        self._waiting.append(job)

    def tick(self, now: int) -> None:
        self._decide(now)

    def on_finish(self, job: int, token: int, now: int) -> bool:
        if token != self._version[job] or job not in self._runs:
            return False
        run = self._runs.pop(job)
        self._close(job, run, run.n)
        self.finish[job] = now
        self._decide(now)
        return True

    def active(self) -> bool:
        return bool(self._waiting or self._runs)

    def drain_completions(self) -> list[tuple[int, int, int]]:
        out, self._completions = self._completions, []
        return out

    def plan(self) -> Plan:
        return self.plan_log.freeze()

    # -- mechanics ----------------------------------------------------------
    def _attained(self, job, now):
        s = self._service[job]
        run = self._runs.get(job)
        if run is not None and now > run.start:
            s += self.jobs[job].k * (min(now, run.finish) - run.start)
        return s

    def _start(self, job, machines, now):
        """Begin a run of ``job`` on ``machines`` (list indexed by worker)."""
        spec = self.jobs[job]
        start = max([now] + [self.free_at[m] for m in machines])
        prev = self._prev[job]
        durs = self._dur[job]
        own_first = [durs[w] + (self._sur[job] if prev[w] >= 0 and prev[w] != m else 0)
                     for w, m in enumerate(machines)]
        n = spec.total_iterations - self._done[job]
        saved = [self.free_at[m] for m in machines]
        run = _Run(start, n, max(own_first), self._tau[job], machines, own_first, saved)
        for m in machines:
            self.holder[m] = job
            self.free_at[m] = run.finish
        self._runs[job] = run
        self._version[job] += 1
        self._completions.append((run.finish, job, self._version[job]))

    def _close(self, job, run, n_iters):
        """Log ``n_iters`` iterations of ``run`` and release its machines."""
        spec = self.jobs[job]
        if n_iters > 0:
            first = self._done[job] + 1
            for w, m in enumerate(run.machines):
                prev = self._prev[job][w]
                self.plan_log.add_segment(job, w, first, n_iters, m, run.start,
                                          self._dur[job][w], run.own_first[w],
                                          run.barrier_first, run.period,
                                          int(prev >= 0 and prev != m))
                self._prev[job][w] = m
            self._done[job] += n_iters
            end = run.boundary(n_iters)
            self._service[job] += spec.k * (end - run.start)
        else:
            end = None
        for i, m in enumerate(run.machines):
            self.holder[m] = -1
            # a run cancelled before it began gives its machines back untouched
            self.free_at[m] = end if end is not None else run.saved_free[i]

    def _preempt(self, job, now):
        run = self._runs[job]
        if now <= run.start:
            done = 0
        else:
            # the iteration in progress runs to its boundary
            done = min(run.n, max(1, -(-(now - run.start - run.barrier_first) // run.period) + 1))
            if done == run.n:
                return False
        del self._runs[job]
        self._version[job] += 1
        self._close(job, run, done)
        self._waiting.append(job)
        return True

    def _pick_machines(self, job, free):
        """Worker-indexed machines: previous machines first, then by (free_at, id)."""
        spec = self.jobs[job]
        chosen = [-1] * spec.k
        taken = set()
        for w, m in enumerate(self._prev[job]):
            if m >= 0 and m in free and m not in taken:
                chosen[w] = m
                taken.add(m)
        rest = sorted((self.free_at[m], m) for m in free if m not in taken)
        it = iter(rest)
        for w in range(spec.k):
            if chosen[w] < 0:
                chosen[w] = next(it)[1]
        return chosen

    def _free_machines(self, job=None):
        caps = self.cluster.capacities
        if job is None:
            return {m for m in range(self.cluster.n_machines) if self.holder[m] < 0}
        mem = max(d.peak_mem_gb for d in self.jobs[job].demands)
        return {m for m in range(self.cluster.n_machines)
                if self.holder[m] < 0 and mem <= caps[m] + 1e-9}

    def _decide(self, now):
        if self.mode == "las":
            self._decide_las(now)
            return
        if self.mode == "packing":
            order = sorted(self._waiting, key=lambda j: (-self.jobs[j].k,
                                                         -self._tau[j] * self.jobs[j].k,
                                                         self.jobs[j].arrival_us, j))
        else:
            order = sorted(self._waiting, key=lambda j: (self.jobs[j].arrival_us, j))
        started = set()
        for job in order:
            free = self._free_machines(job)
            if self.jobs[job].k > len(free):
                if self.mode == "gang_fifo":
                    break
                continue
            self._start(job, self._pick_machines(job, free), now)
            started.add(job)
        if started:
            self._waiting = [j for j in self._waiting if j not in started]

    def _decide_las(self, now):
        active = list(self._runs) + self._waiting
        order = sorted(active, key=lambda j: (self._attained(j, now), self.jobs[j].arrival_us, j))
        budget = self.cluster.n_machines
        chosen = []
        for job in order:
            if self.jobs[job].k <= budget:
                chosen.append(job)
                budget -= self.jobs[job].k
        keep = set(chosen)
        for job in [j for j in self._runs if j not in keep]:
            if not self._preempt(job, now):
                keep.add(job)
        for job in chosen:
            if job in self._runs:
                continue
            free = self._free_machines(job)
            if self.jobs[job].k > len(free):
                continue
            self._start(job, self._pick_machines(job, free), now)
            self._waiting.remove(job)


def _drive(sched) -> Plan:
    from ..sim_engine import drive
    drive(sched, sched.jobs)
    return sched.plan()


def gang_fifo(jobs, cluster, cfg=None, full_backprop=True) -> Plan:
    return _drive(GangScheduler(jobs, cluster, cfg, "gang_fifo", full_backprop))


def las(jobs, cluster, cfg=None, full_backprop=True) -> Plan:
    return _drive(GangScheduler(jobs, cluster, cfg, "las", full_backprop))


def packing(jobs, cluster, cfg=None, full_backprop=True) -> Plan:
    return _drive(GangScheduler(jobs, cluster, cfg, "packing", full_backprop))
