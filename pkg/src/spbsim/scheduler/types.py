from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..cost_model import ProfileEntry, TaskDemand, task_demand
from ..errors import ConfigurationError

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


@dataclass(frozen=True)
class SchedulerConfig:
    interval_s: float = 60.0
    gamma_ms_per_mb: float = 0.8
    tie_break: str = "machine-id"
    # "mem_dur_compute" or "mem_dur"
    priority_dims: str = "mem_dur_compute"
    # 0 means no cap beyond memory and compute
    max_coresident: int = 0

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ConfigurationError("interval_s must be positive")
        if self.gamma_ms_per_mb < 0:
            raise ConfigurationError("gamma_ms_per_mb must be >= 0")
        if self.tie_break != "machine-id":
            raise ConfigurationError(f"unsupported tie_break {self.tie_break!r}")
        if self.priority_dims not in ("mem_dur_compute", "mem_dur"):
            raise ConfigurationError(f"unknown priority_dims {self.priority_dims!r}")
        if self.max_coresident < 0:
            raise ConfigurationError("max_coresident must be >= 0")

    @property
    def interval_us(self) -> int:
        return int(round(self.interval_s * US_PER_S))

    def surcharge_us(self, model_size_mb: float) -> int:
        return ms_to_us(self.gamma_ms_per_mb * model_size_mb)


@dataclass(frozen=True)
class JobDag:
    """One training job: ``k`` workers repeating ``total_iterations`` barrier-synchronised iterations.

    ``demands[w]`` is the per-iteration demand of worker ``w`` (0-based);
    with SPB enabled worker ``w`` backpropagates fraction ``fractions[w]``.
    """

    job_id: str
    arrival_us: int
    model_name: str
    k: int
    total_iterations: int
    spb_enabled: bool
    demands: tuple[TaskDemand, ...]
    model_size_mb: float
    fractions: tuple[float, ...] = ()
    full_demand: TaskDemand | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"{self.job_id}: k must be >= 1")
        if self.total_iterations < 1:
            raise ConfigurationError(f"{self.job_id}: total_iterations must be >= 1")
        if len(self.demands) != self.k:
            raise ConfigurationError(f"{self.job_id}: need one demand per worker")
        if self.arrival_us < 0:
            raise ConfigurationError(f"{self.job_id}: negative arrival")
        if not self.fractions:
            object.__setattr__(self, "fractions", tuple(
                (w + 1) / self.k if self.spb_enabled else 1.0 for w in range(self.k)))
        if self.full_demand is None:
            object.__setattr__(self, "full_demand", max(self.demands, key=lambda d: d.duration_ms))

    @classmethod
    def from_profile(cls, job_id: str, arrival_us: int, entry: ProfileEntry, k: int,
                     iterations: int, spb: bool, comm_ms_per_mb: float = 0.0) -> "JobDag":
        full = task_demand(entry, k, k, comm_ms_per_mb=comm_ms_per_mb)
        if spb:
            demands = tuple(task_demand(entry, j, k, comm_ms_per_mb=comm_ms_per_mb)
                            for j in range(1, k + 1))
        else:
            demands = (full,) * k
        return cls(job_id, arrival_us, entry.model_name, k, iterations, spb, demands,
                   entry.grad_size_mb, full_demand=full)

    def without_spb(self) -> "JobDag":
        """Same job with every worker doing full backprop."""
        return replace(self, spb_enabled=False, demands=(self.full_demand,) * self.k,
                       fractions=(1.0,) * self.k)

    def duration_us(self, w: int) -> int:
        return ms_to_us(self.demands[w].duration_ms)


@dataclass(frozen=True)
class TaskSpec:
    job_id: str
    worker_id: int
    iteration: int
    demand: TaskDemand
    model_size_mb: float = 0.0
    prev_machine: int | None = None
    ready_time: int = 0

    def __post_init__(self):
        if self.iteration < 1:
            raise ConfigurationError("iteration must be >= 1")

    @property
    def duration_us(self) -> int:
        return ms_to_us(self.demand.duration_ms)


@dataclass(frozen=True)
class Assignment:
    machine: int
    start: int
    end: int
    migrated: bool = False


@dataclass
class QueueStats:
    max_mem: float
    max_dur: float
    max_compute: float

    @classmethod
    def of(cls, tasks) -> "QueueStats":
        tasks = list(tasks)
        if not tasks:
            raise RuntimeError("queue statistics of an empty queue")
        return cls(max(t.demand.peak_mem_gb for t in tasks),
                   max(t.demand.duration_ms for t in tasks),
                   max(t.demand.compute_fraction for t in tasks))


@dataclass
class ClusterSpec:
    """Machine list used by planners: one GPU per machine."""

    n_machines: int
    mem_per_machine_gb: float = 16.0
    capacities: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.n_machines < 1:
            raise ConfigurationError("need at least one machine")
        if self.mem_per_machine_gb <= 0:
            raise ConfigurationError("machine memory must be positive")
        if not self.capacities:
            self.capacities = [float(self.mem_per_machine_gb)] * self.n_machines
