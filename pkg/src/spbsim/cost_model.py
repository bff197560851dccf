"""Per-model profiling data and task resource demands as a function of backprop fraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigurationError, TraceFormatError, UnknownModelError
from .spb_core import suffix_layers

PROFILE_COLUMNS = ("model", "fraction", "forward_ms", "backward_ms",
                   "peak_mem_gb", "grad_size_mb", "batch")


@dataclass(frozen=True)
class ProfileEntry:
    model_name: str
    forward_points: tuple[tuple[float, float], ...]
    backward_points: tuple[tuple[float, float, float], ...]
    grad_size_mb: float
    batch_size: int
    compute_fraction: float = 1.0

    def __post_init__(self):
        if not self.backward_points:
            raise ConfigurationError(f"{self.model_name}: empty profile")
        fr = [p[0] for p in self.backward_points]
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise ConfigurationError(f"{self.model_name}: fractions must be strictly increasing")
        if fr[0] <= 0 or fr[-1] > 1:
            raise ConfigurationError(f"{self.model_name}: fractions must lie in (0, 1]")
        for col in (1, 2):
            ys = [p[col] for p in self.backward_points]
            if any(b < a for a, b in zip(ys, ys[1:])):
                raise ConfigurationError(f"{self.model_name}: profile not monotone in fraction")
        if any(f <= 0 for _, f in self.forward_points):
            raise ConfigurationError(f"{self.model_name}: forward_ms must be positive")
        if not 0 < self.compute_fraction <= 1:
            raise ConfigurationError(f"{self.model_name}: compute_fraction must lie in (0, 1]")

    @property
    def forward_ms(self) -> float:
        return self.forward_points[-1][1]

    @property
    def fractions(self) -> tuple[float, ...]:
        return tuple(p[0] for p in self.backward_points)


@dataclass(frozen=True)
class TaskDemand:
    duration_ms: float
    peak_mem_gb: float
    compute_fraction: float = 1.0
    comm_mb: float = 0.0

    def __post_init__(self):
        if self.duration_ms <= 0 or self.peak_mem_gb <= 0:
            raise ConfigurationError("task demand must be positive")
        if not 0 < self.compute_fraction <= 1:
            raise ConfigurationError("compute_fraction must lie in (0, 1]")


def _check_fraction(fraction):
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")


def _interp(xs, ys, x, below):
    # exact at knots; piecewise linear between
    if x >= xs[-1]:
        return ys[-1]
    if x < xs[0]:
        return below(xs[0], ys[0], x)
    lo, hi = 0, len(xs) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    if xs[lo] == x:
        return ys[lo]
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


def backward_time(entry: ProfileEntry, fraction: float) -> float:
    """Backward-pass milliseconds; linear through the origin below the first knot."""
    _check_fraction(fraction)
    pts = entry.backward_points
    return _interp([p[0] for p in pts], [p[1] for p in pts], fraction,
                   lambda x0, y0, x: y0 * x / x0)


def peak_memory(entry: ProfileEntry, fraction: float) -> float:
    """Peak GPU memory in GB; floored at the smallest profiled value."""
    _check_fraction(fraction)
    pts = entry.backward_points
    return _interp([p[0] for p in pts], [p[2] for p in pts], fraction,
                   lambda x0, y0, x: y0)


def forward_time(entry: ProfileEntry, fraction: float = 1.0) -> float:
    _check_fraction(fraction)
    pts = entry.forward_points
    return _interp([p[0] for p in pts], [p[1] for p in pts], fraction,
                   lambda x0, y0, x: y0)


def worker_fraction(j: int, k: int, num_layers: int | None = None) -> float:
    """Share of the network worker ``j`` of ``k`` backpropagates."""
    if num_layers is None:
        if not 1 <= j <= k:
            raise ValueError(f"worker index {j} outside 1..{k}")
        return j / k
    return suffix_layers(j, k, num_layers) / num_layers


def task_demand(entry: ProfileEntry, j: int, k: int, num_layers: int | None = None,
                comm_ms_per_mb: float = 0.0) -> TaskDemand:
    fraction = worker_fraction(j, k, num_layers)
    comm_mb = entry.grad_size_mb * fraction
    duration = forward_time(entry, fraction) + backward_time(entry, fraction)
    return TaskDemand(
        duration_ms=duration + comm_ms_per_mb * comm_mb,
        peak_mem_gb=peak_memory(entry, fraction),
        compute_fraction=entry.compute_fraction,
        comm_mb=comm_mb,
    )


@dataclass
class ProfileTable(Mapping):
    entries: dict[str, ProfileEntry] = field(default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.entries[name]
        except KeyError:
            raise UnknownModelError(name) from None

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)


def _parse_rows(rows: Iterable[dict], source: str,
                compute_fractions: Mapping[str, float] | None) -> ProfileTable:
    grouped: dict[str, list] = {}
    meta: dict[str, tuple[float, int]] = {}
    for lineno, row in rows:
        try:
            name = row["model"].strip()
            frac = float(row["fraction"])
            fwd = float(row["forward_ms"])
            bwd = float(row["backward_ms"])
            mem = float(row["peak_mem_gb"])
            grad = float(row["grad_size_mb"])
            batch = int(row["batch"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"{source}:{lineno}: malformed profile row ({exc})") from None
        if not name:
            raise TraceFormatError(f"{source}:{lineno}: empty model name")
        if name in meta and meta[name] != (grad, batch):
            raise TraceFormatError(f"{source}:{lineno}: inconsistent grad size/batch for {name}")
        meta[name] = (grad, batch)
        grouped.setdefault(name, []).append((frac, fwd, bwd, mem))
    table = ProfileTable()
    cf = compute_fractions or {}
    for name, pts in grouped.items():
        pts.sort()
        table.entries[name] = ProfileEntry(
            model_name=name,
            forward_points=tuple((f, fw) for f, fw, _, _ in pts),
            backward_points=tuple((f, b, m) for f, _, b, m in pts),
            grad_size_mb=meta[name][0],
            batch_size=meta[name][1],
            compute_fraction=cf.get(name, 1.0),
        )
    return table


def load_profiles(path: str | Path | None = None,
                  compute_fractions: Mapping[str, float] | None = None) -> ProfileTable:
    """Load a profile CSV; ``None`` loads the bundled table."""
    if path is None:
        text = resources.files("spbsim").joinpath("data/profiles.csv").read_text()
        source = "profiles.csv"
    else:
        text = Path(path).read_text()
        source = str(path)
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or tuple(reader.fieldnames) != PROFILE_COLUMNS:
        raise TraceFormatError(f"{source}:1: expected header {','.join(PROFILE_COLUMNS)}")
    return _parse_rows(((i + 2, r) for i, r in enumerate(reader)), source, compute_fractions)
