"""Brute-force references used to cross-check the fast code paths.

``optimal_makespan`` searches all start-ordered serial list schedules of a
tiny instance. Placing tasks one at a time, each at its earliest feasible
start on a chosen machine, and requiring starts to be nondecreasing in list
order enumerates every active schedule, so the search is exact for
makespan. Capacity bookkeeping here is a plain interval list, independent of
the RT-space kernel.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InstanceTooLargeError
from .rng import make_rng
from .scheduler.plan import Plan
from .scheduler.types import ClusterSpec, JobDag, SchedulerConfig
from .spb_core import LayeredModel, SpbConfig, aggregate, partial_backprop

MAX_JOBS = 4
MAX_ITERATIONS = 3
MAX_MACHINES = 3
MAX_TASKS = 12
_EPS = 1e-9


# --------------------------------------------------------------------------
# exact makespan

@dataclass
class OracleSchedule:
    makespan: int
    plan: Plan
    nodes: int


class _Machine:
    __slots__ = ("cap", "res")

    def __init__(self, cap):
        self.cap = cap
        self.res: list[tuple[int, int, float, float]] = []

    def fits_at(self, t0, t1, mem, comp, max_co):
        # usage only changes at reservation starts, so checking t0 and every
        # start inside the window covers all instants
        points = [t0] + [s for s, _, _, _ in self.res if t0 < s < t1]
        for p in points:
            um, uc, n = mem, comp, 1
            for s, e, m, c in self.res:
                if s <= p < e:
                    um += m
                    uc += c
                    n += 1
            if um > self.cap + _EPS or uc > 1.0 + _EPS or (max_co and n > max_co):
                return False
        return True

    def earliest(self, ready, dur, mem, comp, max_co):
        if mem > self.cap + _EPS or comp > 1.0 + _EPS:
            return None
        cands = sorted({ready} | {e for _, e, _, _ in self.res if e > ready})
        for c in cands:
            if self.fits_at(c, c + dur, mem, comp, max_co):
                return c
        return None  # unreachable: the last candidate is past every reservation


def _check_size(jobs, n_machines):
    n_tasks = sum(j.k * j.total_iterations for j in jobs)
    if (len(jobs) > MAX_JOBS or n_machines > MAX_MACHINES or n_tasks > MAX_TASKS
            or any(j.total_iterations > MAX_ITERATIONS for j in jobs)):
        raise InstanceTooLargeError(
            f"oracle handles <= {MAX_JOBS} jobs, <= {MAX_ITERATIONS} iterations, "
            f"<= {MAX_MACHINES} machines and <= {MAX_TASKS} tasks; got {len(jobs)} jobs, "
            f"{n_machines} machines, {n_tasks} tasks")


def optimal_makespan(jobs: Sequence[JobDag], cluster: ClusterSpec | int,
                     cfg: SchedulerConfig | None = None, upper_bound: int | None = None,
                     time_limit_s: float = 60.0) -> OracleSchedule:
    """Exact minimum makespan by depth-first branch and bound.

    ``upper_bound`` (e.g. a heuristic makespan) only speeds up pruning; a
    schedule achieving at most that value is still returned.
    """
    cfg = cfg or SchedulerConfig()
    if isinstance(cluster, int):
        cluster = ClusterSpec(cluster)
    jobs = list(jobs)
    nm = cluster.n_machines
    _check_size(jobs, nm)
    max_co = cfg.max_coresident
    tasks = [(j, w) for j, job in enumerate(jobs) for w in range(job.k)]
    dur = {(j, w): jobs[j].duration_us(w) for j, w in tasks}
    mem = {(j, w): jobs[j].demands[w].peak_mem_gb for j, w in tasks}
    comp = {(j, w): jobs[j].demands[w].compute_fraction for j, w in tasks}
    sur = [cfg.surcharge_us(job.model_size_mb) for job in jobs]
    iter_len = [max(dur[j, w] for w in range(job.k)) for j, job in enumerate(jobs)]
    machines = [_Machine(c) for c in cluster.capacities]
    for j, w in tasks:
        if not any(mem[j, w] <= c + _EPS for c in cluster.capacities) or comp[j, w] > 1 + _EPS:
            raise ValueError(f"job {jobs[j].job_id} worker {w} fits no machine")

    # per-job state
    it = [1] * len(jobs)                 # current iteration
    placed = [set() for _ in jobs]       # workers placed in current iteration
    it_end = [0] * len(jobs)             # max end of current iteration so far
    ready = [job.arrival_us for job in jobs]
    prev = {t: -1 for t in tasks}
    used = [False] * nm
    rows: list[tuple] = []
    remaining_work = sum(dur[t] * comp[t] * jobs[t[0]].total_iterations for t in tasks)

    best = [upper_bound + 1 if upper_bound is not None else math.inf, None]
    nodes = [0]
    deadline = time.monotonic() + time_limit_s

    def lower_bound(cur_max, last_start, work):
        lb = max(cur_max, last_start + work / nm)
        for j, job in enumerate(jobs):
            if it[j] > job.total_iterations:
                continue
            unplaced = [dur[j, w] for w in range(job.k) if w not in placed[j]]
            end = max(it_end[j], (max(ready[j], last_start) + max(unplaced)) if unplaced else 0)
            lb = max(lb, end + (job.total_iterations - it[j]) * iter_len[j])
        return lb

    def dfs(cur_max, last_start, last_key, work, n_left):
        nodes[0] += 1
        if nodes[0] % 4096 == 0 and time.monotonic() > deadline:
            raise TimeoutError("oracle search exceeded its time limit")
        if n_left == 0:
            if cur_max < best[0]:
                best[0] = cur_max
                best[1] = list(rows)
            return
        if lower_bound(cur_max, last_start, work) >= best[0]:
            return
        fresh_tried = set()
        for j, job in enumerate(jobs):
            if it[j] > job.total_iterations:
                continue
            for w in range(job.k):
                if w in placed[j]:
                    continue
                t = (j, w)
                for m in range(nm):
                    if not used[m]:
                        # untouched machines with equal capacity are interchangeable
                        sig = (t, machines[m].cap)
                        if sig in fresh_tried:
                            continue
                        fresh_tried.add(sig)
                    p = prev[t]
                    migrated = p >= 0 and p != m
                    eff = dur[t] + (sur[j] if migrated else 0)
                    st = machines[m].earliest(ready[j], eff, mem[t], comp[t], max_co)
                    if st is None:
                        continue
                    key = (st, j, w, it[j])
                    if key <= last_key:
                        continue
                    end = st + eff
                    if max(cur_max, end) >= best[0]:
                        continue
                    # apply
                    machines[m].res.append((st, end, mem[t], comp[t]))
                    was_used = used[m]
                    used[m] = True
                    old_prev, old_end, old_ready = prev[t], it_end[j], ready[j]
                    prev[t] = m
                    placed[j].add(w)
                    it_end[j] = max(it_end[j], end)
                    rows.append((j, w, it[j], m, st, end, int(migrated)))
                    advanced = len(placed[j]) == job.k
                    if advanced:
                        ready[j] = it_end[j]
                        it[j] += 1
                        saved_placed = placed[j]
                        placed[j] = set()
                        it_end[j] = 0
                    dfs(max(cur_max, end), st, key, work - dur[t] * comp[t], n_left - 1)
                    # undo
                    if advanced:
                        it[j] -= 1
                        placed[j] = saved_placed
                        ready[j] = old_ready
                    placed[j].discard(w)
                    it_end[j] = old_end
                    rows.pop()
                    prev[t] = old_prev
                    used[m] = was_used
                    machines[m].res.pop()

    n_total = sum(j.k * j.total_iterations for j in jobs)
    dfs(0, 0, (-1, -1, -1, -1), remaining_work, n_total)
    if best[1] is None:
        raise RuntimeError("no schedule found within the given upper bound")
    return OracleSchedule(int(best[0]), Plan.from_rows(best[1]), nodes[0])


def random_instance(seed: int, max_jobs: int = 3, max_machines: int = 3,
                    max_tasks: int = 10) -> tuple[list[JobDag], int]:
    """Seeded tiny instance: mixed worker counts, SPB-like staggered durations, 1 to 2 iterations."""
    from .cost_model import TaskDemand
    rng = make_rng(seed, 0x0AC1)
    n_machines = int(rng.integers(2, max_machines + 1))
    jobs = []
    budget = min(max_tasks, MAX_TASKS)
    n_jobs = int(rng.integers(2, max_jobs + 1))
    for j in range(n_jobs):
        k = int(rng.integers(1, 4))
        iters = int(rng.integers(1, 3))
        if k * iters > budget - (n_jobs - j - 1):
            k, iters = 1, 1
        budget -= k * iters
        base = int(rng.integers(20, 101))
        demands = tuple(TaskDemand(duration_ms=float(round(base * (w + 1) / k)) or 1.0,
                                   peak_mem_gb=float(rng.choice([2.0, 4.0, 6.0, 9.0])),
                                   compute_fraction=float(rng.choice([0.5, 1.0])))
                        for w in range(k))
        jobs.append(JobDag(f"r{seed}-{j}", int(rng.integers(0, 4)) * 10_000, "synthetic", k,
                           iters, k > 1, demands, float(rng.integers(5, 60))))
    jobs.sort(key=lambda d: d.arrival_us)
    return jobs, n_machines


# --------------------------------------------------------------------------
# SPB chunk coverage

@dataclass(frozen=True)
class Coverage:
    per_layer: tuple[int, ...]
    chunks: tuple[int, ...]


def coverage_oracle(k: int, L: int) -> Coverage:
    """Contributor counts by enumerating every worker's suffix.

    ``per_layer[l]`` counts workers computing layer ``l + 1`` (input side
    first); ``chunks`` run-length groups equal consecutive counts.
    """
    if not (1 <= k <= 64 and 1 <= L <= 64):
        raise ValueError("k and L must lie in 1..64")
    counts = [0] * L
    for j in range(1, k + 1):
        depth = math.ceil(j * L / k)
        for layer in range(L - depth, L):
            counts[layer] += 1
    chunks = []
    for c in counts:
        if not chunks or chunks[-1] != c:
            chunks.append(c)
    return Coverage(tuple(counts), tuple(chunks))


# --------------------------------------------------------------------------
# variance by direct simulation of the protocol

@dataclass
class VarianceOracle:
    k: int
    B: int
    trials: int
    p_hat: np.ndarray
    p_hat_se: np.ndarray
    harmonic: float
    harmonic_se: float
    spb_mean: float
    spb_se: float
    baseline_mean: float
    baseline_se: float


def _se(a):
    a = np.asarray(a)
    return float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.inf


def variance_oracle(model: LayeredModel, cfg: SpbConfig, x: np.ndarray | None = None,
                    trials: int = 10_000, seed: int = 0) -> VarianceOracle:
    """Monte-Carlo SPB noise through the worker/parameter-server protocol itself.

    Per-chunk single-sample variances ``p_i`` come from their own random
    stream. The full SPB and mini-batch estimates replay the same
    ``(trials, B)`` index draw that ``spb_core.empirical_variance`` uses for
    ``seed``, but compute each trial with ``partial_backprop`` and
    ``aggregate`` one batch at a time.
    """
    k, B = cfg.k, cfg.B
    m = model.copy()
    if x is not None:
        m.set_flat(x)
    L, N = m.L, m.n_samples
    full = partial_backprop(m, np.arange(N), L).blocks
    per = B // k
    suffixes = [math.ceil(j * L / k) for j in range(1, k + 1)]

    # chunk layer ranges, from enumeration rather than spb_core bookkeeping
    counts = coverage_oracle(k, L).per_layer
    chunk_layers: dict[int, list[int]] = {}
    for layer, c in enumerate(counts):
        chunk_layers.setdefault(c, []).append(layer)

    single = make_rng(seed, 0x5A3E).integers(0, N, size=trials)
    p_samples = np.zeros((trials, k))
    for t, s in enumerate(single):
        g = partial_backprop(m, np.array([s]), L).blocks
        sq = [float(np.sum((g[l] - full[l]) ** 2)) for l in range(L)]
        for c, layers in chunk_layers.items():
            p_samples[t, c - 1] = sum(sq[l] for l in layers)

    idx = make_rng(seed).integers(0, N, size=(trials, B))
    spb_sq = np.empty(trials)
    base_sq = np.empty(trials)
    for t in range(trials):
        batch = idx[t]
        grads = [partial_backprop(m, batch[j * per:(j + 1) * per], suffixes[j])
                 for j in range(k)]
        agg = aggregate(grads, k)
        spb_sq[t] = sum(float(np.sum((agg[l] - full[l]) ** 2)) for l in range(L))
        base = partial_backprop(m, batch, L).blocks
        base_sq[t] = sum(float(np.sum((base[l] - full[l]) ** 2)) for l in range(L))

    p_hat = p_samples.mean(axis=0)
    p_se = np.array([_se(p_samples[:, i]) for i in range(k)])
    w = np.array([k / (i * B) for i in range(1, k + 1)])
    harmonic_samples = p_samples @ w
    return VarianceOracle(k=k, B=B, trials=trials, p_hat=p_hat, p_hat_se=p_se,
                          harmonic=float(harmonic_samples.mean()),
                          harmonic_se=_se(harmonic_samples),
                          spb_mean=float(spb_sq.mean()), spb_se=_se(spb_sq),
                          baseline_mean=float(base_sq.mean()), baseline_se=_se(base_sq))
