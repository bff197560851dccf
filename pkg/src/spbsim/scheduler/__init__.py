"""Iteration-level (Jigsaw) scheduling and gang baselines."""
from .baselines import GangScheduler, gang_fifo, las, packing
from .jigsaw import (JigsawScheduler, earliest_start, make_timelines, place, plan_jobs,
                     pop_order, priority)
from .plan import PLAN_COLUMNS, Plan, PlanBuilder, Violation, validate_schedule
from .types import (Assignment, ClusterSpec, JobDag, QueueStats, SchedulerConfig, TaskSpec,
                    ms_to_us)

POLICY_NAMES = ("jigsaw", "jigsaw-random", "gang", "las", "packing")
_ALIASES = {"gang_fifo": "gang", "tiresias": "las", "gandiva": "packing", "random": "jigsaw-random"}


def canonical_policy(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in POLICY_NAMES:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    return key


def make_policy(name: str, jobs, cluster: ClusterSpec, cfg: SchedulerConfig | None = None,
                seed: int = 0):
    """Fresh stateful policy object for one simulation."""
    key = canonical_policy(name)
    if key == "jigsaw":
        return JigsawScheduler(jobs, cluster, cfg)
    if key == "jigsaw-random":
        return JigsawScheduler(jobs, cluster, cfg, placement="random", seed=seed)
    mode = {"gang": "gang_fifo"}.get(key, key)
    return GangScheduler(jobs, cluster, cfg, mode)


__all__ = [
    "Assignment", "ClusterSpec", "GangScheduler", "JigsawScheduler", "JobDag", "PLAN_COLUMNS",
    "POLICY_NAMES", "Plan", "PlanBuilder", "QueueStats", "SchedulerConfig", "TaskSpec",
    "Violation", "canonical_policy", "earliest_start", "gang_fifo", "las", "make_policy",
    "make_timelines", "ms_to_us", "packing", "place", "plan_jobs", "pop_order", "priority",
    "validate_schedule",
]
