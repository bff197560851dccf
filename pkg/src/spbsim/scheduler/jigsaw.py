"""Iteration-level scheduling over an RT-space (device x time).

Every worker-iteration is a task. Ready tasks sit in a priority queue keyed
by the normalized product of memory, duration and compute; the scheduler
pops the largest, reserves it on the machine where its work can begin
earliest (a machine other than the worker's previous one pays a model
transfer surcharge), and releases the job's next iteration once the last
task of the current one is placed.
"""
from __future__ import annotations

from typing import Sequence

from .. import _kernel
from ..errors import UnschedulableTaskError
from ..rng import make_rng
from .plan import Plan, PlanBuilder
from .types import Assignment, ClusterSpec, JobDag, QueueStats, SchedulerConfig, TaskSpec

INFEASIBLE = _kernel.INFEASIBLE
DEFERRED = _kernel.DEFERRED


def priority(task: TaskSpec, stats: QueueStats, dims: str = "mem_dur_compute") -> float:
    """Normalized resource-time product in (0, 1]; larger is scheduled first."""
    if stats is None or stats.max_mem <= 0 or stats.max_dur <= 0 or stats.max_compute <= 0:
        raise RuntimeError("queue statistics missing")
    d = task.demand
    p = (d.peak_mem_gb / stats.max_mem) * (d.duration_ms / stats.max_dur)
    if dims == "mem_dur_compute":
        p *= d.compute_fraction / stats.max_compute
    return p


def pop_order(tasks: Sequence[TaskSpec], dims: str = "mem_dur_compute") -> list[TaskSpec]:
    """Queue order: descending priority, ties by (job_id, worker_id)."""
    stats = QueueStats.of(tasks)
    return sorted(tasks, key=lambda t: (-priority(t, stats, dims), t.job_id, t.worker_id))


def make_timelines(cluster: ClusterSpec, cfg: SchedulerConfig, backend=None) -> list:
    impl = backend or _kernel
    return [impl.Timeline(m, cap, cfg.max_coresident) for m, cap in enumerate(cluster.capacities)]


def earliest_start(task: TaskSpec, machine, cfg: SchedulerConfig) -> tuple[int | None, int]:
    """(start, effective_duration) on one machine; start is None when the task can never fit."""
    prev = task.prev_machine
    migrate = prev is not None and prev != machine.machine_id
    eff = task.duration_us + (cfg.surcharge_us(task.model_size_mb) if migrate else 0)
    d = task.demand
    st = machine.earliest_start(task.ready_time, eff, d.peak_mem_gb, d.compute_fraction)
    return (None if st < 0 else st), eff


def place(task: TaskSpec, machines: list, cfg: SchedulerConfig,
          horizon: int = _kernel.NEVER) -> Assignment:
    """Reserve ``task`` on the machine where its work begins earliest."""
    d = task.demand
    prev = -1 if task.prev_machine is None else task.prev_machine
    m, start, eff = _kernel.place(machines, task.ready_time, task.duration_us, d.peak_mem_gb,
                                  d.compute_fraction, prev, cfg.surcharge_us(task.model_size_mb),
                                  horizon)
    if m == INFEASIBLE:
        raise UnschedulableTaskError(
            f"{task.job_id}/w{task.worker_id}: {d.peak_mem_gb} GB fits no machine")
    if m == DEFERRED:
        return Assignment(-1, start, start + eff, prev >= 0)
    return Assignment(m, start, start + eff, prev >= 0 and m != prev)


class JigsawScheduler:
    """Stateful iteration-level planner driven by ``schedule_interval`` calls.

    ``placement="random"`` is the ablation that picks a uniformly random
    memory-feasible machine instead of the earliest-start one. ``backend``
    selects a kernel module (compiled or pure Python); both give identical plans.
    """

    name = "jigsaw"

    def __init__(self, jobs: Sequence[JobDag], cluster: ClusterSpec,
                 cfg: SchedulerConfig | None = None, placement: str = "earliest",
                 seed: int = 0, backend=None):
        if placement not in ("earliest", "random"):
            raise ValueError(f"unknown placement {placement!r}")
        self.cfg = cfg or SchedulerConfig()
        self.jobs = list(jobs)
        self.cluster = cluster
        self.placement = placement
        if placement == "random":
            self.name = "jigsaw-random"
        kernel = backend or _kernel
        self.timelines = make_timelines(cluster, self.cfg, kernel)
        self.plan_log = PlanBuilder()
        offsets = [0]
        for j in self.jobs:
            offsets.append(offsets[-1] + j.k)
        flat = [(j.duration_us(w), d) for j in self.jobs for w, d in enumerate(j.demands)]
        refill = None
        if placement == "random":
            rng = make_rng(seed, 0x6A16)
            refill = lambda: rng.random(1 << 16)  # noqa: E731
        self._core = kernel.Planner(
            self.timelines, offsets, [j.total_iterations for j in self.jobs],
            [self.cfg.surcharge_us(j.model_size_mb) for j in self.jobs],
            [du for du, _ in flat], [d.peak_mem_gb for _, d in flat],
            [d.compute_fraction for _, d in flat], [self._raw_key(d) for _, d in flat], refill)
        self.finish = [-1] * len(self.jobs)
        self.failed: list[int] = []

    def _raw_key(self, d) -> float:
        # Normalizing by queue maxima rescales every key by the same positive
        # constant, so the raw product gives the same pop order.
        p = d.peak_mem_gb * d.duration_ms
        if self.cfg.priority_dims == "mem_dur_compute":
            p *= d.compute_fraction
        return -p

    # -- policy interface ---------------------------------------------------
    def submit(self, job: int, now: int) -> None:
        self._core.submit(job, max(self.jobs[job].arrival_us, now))

    def tick(self, now: int) -> None:
        self.schedule_interval(now)

    def on_finish(self, job: int, token: int, now: int) -> bool:
        return True

    def active(self) -> bool:
        return self._core.active()

    def drain_completions(self) -> list[tuple[int, int, int]]:
        out = []
        for j, t in self._core.take_completions():
            self.finish[j] = t
            out.append((t, j, 0))
        return out

    def plan(self) -> Plan:
        return self.plan_log.freeze()

    def schedule_interval(self, now: int, until: int | None = None) -> int:
        """Commit every queued task that can start before ``now + T``; returns the count placed.

        ``until`` overrides the horizon end. Jobs that fit no machine are
        appended to ``failed`` and dropped.
        """
        horizon = now + self.cfg.interval_us if until is None else until
        placed = self._core.run_interval(now, horizon)
        self.plan_log.extend_flat(self._core.take_rows())
        self.failed.extend(self._core.take_failures())
        return placed


def plan_jobs(jobs: Sequence[JobDag], cluster: ClusterSpec, cfg: SchedulerConfig | None = None,
              placement: str = "earliest", seed: int = 0) -> tuple[Plan, JigsawScheduler]:
    """Plan every job to completion, one planning round per distinct arrival time.

    Each round commits tasks that start before the next arrival; the last
    round has no horizon. Jobs that fit no machine are left in ``sched.failed``.
    """
    cfg = cfg or SchedulerConfig()
    sched = JigsawScheduler(jobs, cluster, cfg, placement=placement, seed=seed)
    times = sorted({j.arrival_us for j in jobs})
    for i, t in enumerate(times):
        for idx, job in enumerate(jobs):
            if job.arrival_us == t:
                sched.submit(idx, t)
        until = times[i + 1] if i + 1 < len(times) else _kernel.NEVER
        sched.schedule_interval(t, until)
    return sched.plan(), sched
