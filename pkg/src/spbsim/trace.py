"""Job trace files and the synthetic workload generator.

A trace is a CSV with header ``job_id,arrival_s,model_name,num_workers,iterations,spb``.
Arrivals are written with microsecond precision so a save/load round trip is exact.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cost_model import ProfileTable, load_profiles
from .errors import ConfigurationError, TraceFormatError, UnknownModelError
from .ioutil import atomic_write_text
from .rng import make_rng
from .scheduler.types import US_PER_S, JobDag

TRACE_COLUMNS = ("job_id", "arrival_s", "model_name", "num_workers", "iterations", "spb")
WORKER_SIZES = (1, 2, 4, 8, 16)
DEFAULT_MIX = (0.50, 0.10, 0.20, 0.15, 0.05)
_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


@dataclass(frozen=True)
class TraceRecord:
    job_id: str
    arrival_us: int
    model_name: str
    num_workers: int
    iterations: int
    spb: bool = True

    @property
    def arrival_s(self) -> float:
        return self.arrival_us / US_PER_S


def _fmt_seconds(us: int) -> str:
    return f"{us // US_PER_S}.{us % US_PER_S:06d}"


def _parse_seconds(text: str) -> int:
    # exact decimal parse; floats would round 0.1-style values off by 1 us
    text = text.strip()
    if not text or text.startswith("-"):
        raise ValueError(f"bad arrival {text!r}")
    whole, _, frac = text.partition(".")
    if len(frac) > 6 or not (whole or frac) or not (whole + frac).isdigit():
        raise ValueError(f"bad arrival {text!r}")
    return int(whole or 0) * US_PER_S + int(frac.ljust(6, "0") or 0)


def to_csv_text(records: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for r in records:
        buf.write(f"{r.job_id},{_fmt_seconds(r.arrival_us)},{r.model_name},{r.num_workers},"
                  f"{r.iterations},{'true' if r.spb else 'false'}\n")
    return buf.getvalue()


def save(records: Sequence[TraceRecord], path) -> None:
    atomic_write_text(path, to_csv_text(records))


def parse(text: str, source: str = "<trace>",
          profiles: Mapping | None = None) -> list[TraceRecord]:
    """Parse trace CSV text; errors name ``source`` and the 1-based line number."""
    lines = text.splitlines()
    if not any(l.strip() for l in lines):
        return []
    reader = csv.reader(lines)
    header = tuple(h.strip() for h in next(reader))
    if header != TRACE_COLUMNS:
        raise TraceFormatError(f"{source}:1: expected header {','.join(TRACE_COLUMNS)}")
    out: list[TraceRecord] = []
    seen: set[str] = set()
    last = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{source}:{lineno}"
        if len(row) != len(TRACE_COLUMNS):
            raise TraceFormatError(f"{where}: expected {len(TRACE_COLUMNS)} fields, got {len(row)}")
        job_id, arr, model, workers, iters, spb = (c.strip() for c in row)
        if not job_id:
            raise TraceFormatError(f"{where}: empty job_id")
        if job_id in seen:
            raise TraceFormatError(f"{where}: duplicate job_id {job_id!r}")
        try:
            arrival = _parse_seconds(arr)
            k = int(workers)
            n_it = int(iters)
        except ValueError as exc:
            raise TraceFormatError(f"{where}: {exc}") from None
        if arrival < last:
            raise TraceFormatError(f"{where}: arrival_s decreases")
        if k not in WORKER_SIZES:
            raise TraceFormatError(f"{where}: num_workers must be one of {WORKER_SIZES}")
        if n_it < 1:
            raise TraceFormatError(f"{where}: iterations must be >= 1")
        flag = spb.lower()
        if flag not in _TRUE | _FALSE:
            raise TraceFormatError(f"{where}: spb must be true or false")
        if profiles is not None and model not in profiles:
            raise UnknownModelError(f"{where}: unknown model {model!r}")
        seen.add(job_id)
        last = arrival
        out.append(TraceRecord(job_id, arrival, model, k, n_it, flag in _TRUE))
    return out


def to_jobs(records: Sequence[TraceRecord], profiles: ProfileTable | None = None,
            comm_ms_per_mb: float = 0.0) -> list[JobDag]:
    profiles = profiles if profiles is not None else load_profiles()
    return [JobDag.from_profile(r.job_id, r.arrival_us, profiles[r.model_name], r.num_workers,
                                r.iterations, r.spb, comm_ms_per_mb) for r in records]


def load(path, profiles: ProfileTable | None = None, comm_ms_per_mb: float = 0.0) -> list[JobDag]:
    """Read a trace file into JobDags resolved against ``profiles``."""
    profiles = profiles if profiles is not None else load_profiles()
    records = parse(Path(path).read_text(), str(path), profiles)
    return to_jobs(records, profiles, comm_ms_per_mb)


def generate(seed: int, n_jobs: int = 500, mean_interarrival_s: float = 30.0,
             worker_mix: Sequence[float] = DEFAULT_MIX,
             iters_range: tuple[int, int] = (50, 500),
             models: Sequence[str] | None = None, spb: bool = True) -> list[TraceRecord]:
    """Poisson arrivals, worker counts from ``worker_mix`` and uniform models and iterations.

    The first job arrives at time 0. Each quantity has its own random stream,
    so e.g. changing ``iters_range`` leaves arrivals and models unchanged.
    """
    mix = np.asarray(worker_mix, dtype=float)
    if mix.shape != (len(WORKER_SIZES),) or np.any(mix < 0) or not np.isclose(mix.sum(), 1.0):
        raise ConfigurationError(f"worker_mix must be {len(WORKER_SIZES)} non-negative "
                                 f"weights summing to 1")
    if n_jobs < 0:
        raise ConfigurationError("n_jobs must be >= 0")
    if mean_interarrival_s <= 0:
        raise ConfigurationError("mean_interarrival_s must be positive")
    lo, hi = iters_range
    if not 1 <= lo <= hi:
        raise ConfigurationError("iters_range must satisfy 1 <= lo <= hi")
    if models is None:
        models = load_profiles().names()
    models = list(models)
    if not models:
        raise ConfigurationError("no models to draw from")
    gaps = make_rng(seed, 1).exponential(mean_interarrival_s * US_PER_S, n_jobs)
    arrivals = np.r_[0, np.cumsum(np.rint(gaps[:-1]).astype(np.int64))] if n_jobs else []
    workers = make_rng(seed, 2).choice(len(WORKER_SIZES), size=n_jobs, p=mix / mix.sum())
    picks = make_rng(seed, 3).integers(0, len(models), n_jobs)
    iters = make_rng(seed, 4).integers(lo, hi + 1, n_jobs)
    width = max(4, len(str(n_jobs)))
    return [TraceRecord(f"job{i:0{width}d}", int(arrivals[i]), models[picks[i]],
                        WORKER_SIZES[workers[i]], int(iters[i]), spb) for i in range(n_jobs)]
