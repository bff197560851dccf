"""Pure-Python RT-space kernel.

A machine's timeline is a piecewise-constant resource profile: breakpoint
``times[i]`` opens a segment running until ``times[i + 1]`` with usage
``(mem[i], comp[i], cnt[i])``. The last segment is always empty and runs to
infinity. This module is the reference twin of ``_rtspace.pyx``; both must
return identical results for identical call sequences.
"""
from array import array
from bisect import bisect_left, bisect_right
from heapq import heappop, heappush

NEVER = 1 << 62
EPS = 1e-9

INFEASIBLE = -1
DEFERRED = -2


class Timeline:
    __slots__ = ("machine_id", "mem_capacity", "max_coresident",
                 "times", "mem", "comp", "cnt")

    def __init__(self, machine_id, mem_capacity, max_coresident=0):
        if mem_capacity <= 0:
            raise ValueError("mem_capacity must be positive")
        self.machine_id = int(machine_id)
        self.mem_capacity = float(mem_capacity)
        self.max_coresident = int(max_coresident)
        self.times = [0]
        self.mem = [0.0]
        self.comp = [0.0]
        self.cnt = [0]

    def fits(self, mem, comp):
        return mem <= self.mem_capacity + EPS and comp <= 1.0 + EPS

    def earliest_start(self, ready, dur, mem, comp, limit=NEVER):
        """Earliest start >= ``ready`` where the demand fits for ``dur`` contiguously.

        Returns -1 when the demand can never fit on this machine. Scanning
        stops once the candidate reaches ``limit``; the returned value is then
        only known to be ``>= limit``.
        """
        if not self.fits(mem, comp):
            return -1
        times = self.times
        umem = self.mem
        ucomp = self.comp
        ucnt = self.cnt
        maxc = self.max_coresident
        memcap = self.mem_capacity - mem + EPS
        compcap = 1.0 - comp + EPS
        n = len(times)
        start = ready if ready > times[0] else times[0]
        i = bisect_right(times, start) - 1
        while True:
            if start >= limit:
                return start
            if umem[i] > memcap or ucomp[i] > compcap or (maxc and ucnt[i] >= maxc):
                i += 1
                start = times[i]
                continue
            end = start + dur
            j = i + 1
            while j < n and times[j] < end:
                if umem[j] > memcap or ucomp[j] > compcap or (maxc and ucnt[j] >= maxc):
                    break
                j += 1
            else:
                return start
            i = j + 1
            start = times[i]

    def _split(self, t):
        times = self.times
        idx = bisect_left(times, t)
        if idx < len(times) and times[idx] == t:
            return idx
        times.insert(idx, t)
        self.mem.insert(idx, self.mem[idx - 1])
        self.comp.insert(idx, self.comp[idx - 1])
        self.cnt.insert(idx, self.cnt[idx - 1])
        return idx

    def _same(self, a, b):
        return (self.mem[a] == self.mem[b] and self.comp[a] == self.comp[b]
                and self.cnt[a] == self.cnt[b])

    def _drop(self, idx):
        del self.times[idx]
        del self.mem[idx]
        del self.comp[idx]
        del self.cnt[idx]

    def reserve(self, start, end, mem, comp):
        if end <= start:
            raise ValueError("empty reservation")
        if start < self.times[0]:
            raise ValueError("reservation before pruned horizon")
        i = self._split(start)
        j = self._split(end)
        umem = self.mem
        ucomp = self.comp
        ucnt = self.cnt
        for s in range(i, j):
            umem[s] += mem
            ucomp[s] += comp
            ucnt[s] += 1
        if j < len(self.times) and self._same(j - 1, j):
            self._drop(j)
        if i > 0 and self._same(i - 1, i):
            self._drop(i)

    def prune(self, now):
        i = bisect_right(self.times, now) - 1
        if i > 0:
            del self.times[:i]
            del self.mem[:i]
            del self.comp[:i]
            del self.cnt[:i]

    def segments(self):
        return list(zip(self.times, self.mem, self.comp, self.cnt))

    def busy_until(self):
        """Time after which the machine is empty."""
        return self.times[-1]


def place(timelines, ready, dur, mem, comp, prev, surcharge, horizon, commit=True):
    """Pick the machine where the task's work can begin earliest and reserve it.

    A machine other than ``prev`` (when ``prev >= 0``) pays ``surcharge`` on
    top of ``dur``. Ties go to ``prev`` and then to the lowest index.
    Returns ``(machine, start, effective_duration)``; ``machine`` is
    ``INFEASIBLE`` when no machine can ever hold the demand and ``DEFERRED``
    when the best start is at or beyond ``horizon``.
    """
    best_m = INFEASIBLE
    best_key = NEVER
    best_start = 0
    best_eff = 0
    n = len(timelines)
    order = range(n) if prev < 0 else [prev] + [m for m in range(n) if m != prev]
    for m in order:
        s = surcharge if (prev >= 0 and m != prev) else 0
        lim = best_key - s
        st = timelines[m].earliest_start(ready, dur + s, mem, comp, lim)
        if 0 <= st < lim:
            best_m = m
            best_key = st + s
            best_start = st
            best_eff = dur + s
    if best_m == INFEASIBLE:
        return INFEASIBLE, 0, 0
    if best_start >= horizon:
        return DEFERRED, best_start, best_eff
    if commit:
        timelines[best_m].reserve(best_start, best_start + best_eff, mem, comp)
    return best_m, best_start, best_eff


def place_on(timelines, m, ready, dur, mem, comp, prev, surcharge, horizon, commit=True):
    """Earliest placement restricted to machine ``m``; same return codes as ``place``."""
    s = surcharge if (prev >= 0 and m != prev) else 0
    st = timelines[m].earliest_start(ready, dur + s, mem, comp, NEVER)
    if st < 0:
        return INFEASIBLE, 0, 0
    if st >= horizon:
        return DEFERRED, st, dur + s
    if commit:
        timelines[m].reserve(st, st + dur + s, mem, comp)
    return m, st, dur + s


class Planner:
    """Iteration-level planning loop over a list of timelines.

    Jobs are indexed ``0..n-1`` and their workers are flattened with
    ``offsets``. Queue entries are ``(key, job, worker)`` popped in ascending
    order, so callers pass the negated priority as ``key``. Placed tasks are
    buffered as rows ``(job, worker, iteration, machine, start, end, migrated)``
    until ``take_rows``.

    With ``refill`` given, each task goes to a uniformly random memory-feasible
    machine; ``refill()`` must return a fresh block of uniforms in [0, 1).
    """

    def __init__(self, timelines, offsets, total_iterations, surcharge, dur, mem, comp, key,
                 refill=None):
        self.timelines = list(timelines)
        self.offsets = list(offsets)
        self.total = list(total_iterations)
        self.surcharge = list(surcharge)
        self.dur = list(dur)
        self.mem = list(mem)
        self.comp = list(comp)
        self.key = list(key)
        n = len(self.total)
        f = self.offsets[-1]
        self.prev = [-1] * f
        self.iteration = [0] * n
        self.pending = [0] * n
        self.ready = [0] * n
        self.maxend = [0] * n
        self.failed = [False] * n
        self.heap = []
        self.rows = array("q")
        self.completions = []
        self.failures = []
        self.refill = refill
        self.rand = []
        self.rand_pos = 0

    def _push_iteration(self, job):
        lo, hi = self.offsets[job], self.offsets[job + 1]
        self.pending[job] = hi - lo
        key = self.key
        for f in range(lo, hi):
            heappush(self.heap, (key[f], job, f - lo))

    def submit(self, job, ready):
        if self.iteration[job] != 0:
            raise ValueError(f"job {job} submitted twice")
        self.iteration[job] = 1
        self.ready[job] = ready
        self.maxend[job] = 0
        self._push_iteration(job)

    def active(self):
        return len(self.heap) > 0

    def _random_machine(self, mem, comp):
        feasible = [m for m, tl in enumerate(self.timelines) if tl.fits(mem, comp)]
        if not feasible:
            return -1
        if self.rand_pos >= len(self.rand):
            self.rand = list(self.refill())
            self.rand_pos = 0
        u = self.rand[self.rand_pos]
        self.rand_pos += 1
        return feasible[int(u * len(feasible))]

    def run_interval(self, now, horizon):
        """Commit queued tasks starting before ``horizon``; returns the number placed."""
        tls = self.timelines
        for tl in tls:
            tl.prune(now)
        heap = self.heap
        rows = self.rows
        deferred = []
        placed = 0
        while heap:
            entry = heappop(heap)
            job = entry[1]
            w = entry[2]
            if self.failed[job]:
                continue
            f = self.offsets[job] + w
            ready = self.ready[job]
            if ready < now:
                ready = now
            prev = self.prev[f]
            if self.refill is not None:
                m = self._random_machine(self.mem[f], self.comp[f])
                if m < 0:
                    m, start, eff = INFEASIBLE, 0, 0
                else:
                    m, start, eff = place_on(tls, m, ready, self.dur[f], self.mem[f],
                                             self.comp[f], prev, self.surcharge[job], horizon)
            else:
                m, start, eff = place(tls, ready, self.dur[f], self.mem[f], self.comp[f], prev,
                                      self.surcharge[job], horizon)
            if m < 0:
                if m == DEFERRED:
                    deferred.append(entry)
                else:
                    self.failed[job] = True
                    self.failures.append(job)
                continue
            end = start + eff
            rows.extend((job, w, self.iteration[job], m, start, end,
                         1 if (prev >= 0 and m != prev) else 0))
            placed += 1
            self.prev[f] = m
            if end > self.maxend[job]:
                self.maxend[job] = end
            self.pending[job] -= 1
            if self.pending[job] == 0:
                if self.iteration[job] == self.total[job]:
                    self.completions.append((job, self.maxend[job]))
                else:
                    self.iteration[job] += 1
                    self.ready[job] = self.maxend[job]
                    self._push_iteration(job)
        for entry in deferred:
            heappush(heap, entry)
        return placed

    def take_rows(self):
        """Buffered rows as a flat int64 sequence; clears the buffer."""
        out = self.rows
        self.rows = array("q")
        return out

    def take_completions(self):
        out, self.completions = self.completions, []
        return out

    def take_failures(self):
        out, self.failures = self.failures, []
        return out
