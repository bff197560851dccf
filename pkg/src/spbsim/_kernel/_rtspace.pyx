# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RT-space kernel. Mirrors ``rtspace_py`` call for call."""
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memmove

ctypedef long long i64

cdef i64 NEVER_C = (<i64>1) << 62
cdef double EPS_C = 1e-9

NEVER = NEVER_C
EPS = EPS_C
INFEASIBLE = -1
DEFERRED = -2


cdef class Timeline:
    cdef public int machine_id
    cdef public double mem_capacity
    cdef public int max_coresident
    cdef i64* _t
    cdef double* _mem
    cdef double* _comp
    cdef int* _cnt
    cdef Py_ssize_t n
    cdef Py_ssize_t cap

    def __cinit__(self, machine_id, mem_capacity, max_coresident=0):
        self.cap = 64
        self._t = <i64*> malloc(self.cap * sizeof(i64))
        self._mem = <double*> malloc(self.cap * sizeof(double))
        self._comp = <double*> malloc(self.cap * sizeof(double))
        self._cnt = <int*> malloc(self.cap * sizeof(int))
        if not self._t or not self._mem or not self._comp or not self._cnt:
            raise MemoryError()
        self.n = 1
        self._t[0] = 0
        self._mem[0] = 0.0
        self._comp[0] = 0.0
        self._cnt[0] = 0

    def __init__(self, machine_id, mem_capacity, max_coresident=0):
        if mem_capacity <= 0:
            raise ValueError("mem_capacity must be positive")
        self.machine_id = machine_id
        self.mem_capacity = mem_capacity
        self.max_coresident = max_coresident

    def __dealloc__(self):
        free(self._t)
        free(self._mem)
        free(self._comp)
        free(self._cnt)

    cdef void _grow(self) except *:
        cdef Py_ssize_t cap = self.cap * 2
        cdef i64* t = <i64*> realloc(self._t, cap * sizeof(i64))
        if not t:
            raise MemoryError()
        self._t = t
        cdef double* m = <double*> realloc(self._mem, cap * sizeof(double))
        if not m:
            raise MemoryError()
        self._mem = m
        cdef double* c = <double*> realloc(self._comp, cap * sizeof(double))
        if not c:
            raise MemoryError()
        self._comp = c
        cdef int* k = <int*> realloc(self._cnt, cap * sizeof(int))
        if not k:
            raise MemoryError()
        self._cnt = k
        self.cap = cap

    cpdef bint fits(self, double mem, double comp):
        return mem <= self.mem_capacity + EPS_C and comp <= 1.0 + EPS_C

    cdef inline bint _blocked(self, Py_ssize_t i, double memcap, double compcap) nogil:
        return (self._mem[i] > memcap or self._comp[i] > compcap
                or (self.max_coresident and self._cnt[i] >= self.max_coresident))

    cdef Py_ssize_t _bisect_right(self, i64 t) nogil:
        cdef Py_ssize_t lo = 0, hi = self.n, mid
        while lo < hi:
            mid = (lo + hi) >> 1
            if t < self._t[mid]:
                hi = mid
            else:
                lo = mid + 1
        return lo

    cdef Py_ssize_t _bisect_left(self, i64 t) nogil:
        cdef Py_ssize_t lo = 0, hi = self.n, mid
        while lo < hi:
            mid = (lo + hi) >> 1
            if self._t[mid] < t:
                lo = mid + 1
            else:
                hi = mid
        return lo

    cdef i64 _earliest(self, i64 ready, i64 dur, double mem, double comp, i64 limit):
        if not self.fits(mem, comp):
            return -1
        cdef double memcap = self.mem_capacity - mem + EPS_C
        cdef double compcap = 1.0 - comp + EPS_C
        cdef Py_ssize_t n = self.n
        cdef i64 start = ready if ready > self._t[0] else self._t[0]
        cdef Py_ssize_t i = self._bisect_right(start) - 1
        cdef Py_ssize_t j
        cdef i64 end
        cdef bint blocked
        while True:
            if start >= limit:
                return start
            if self._blocked(i, memcap, compcap):
                i += 1
                start = self._t[i]
                continue
            end = start + dur
            j = i + 1
            blocked = False
            while j < n and self._t[j] < end:
                if self._blocked(j, memcap, compcap):
                    blocked = True
                    break
                j += 1
            if not blocked:
                return start
            i = j + 1
            start = self._t[i]

    def earliest_start(self, i64 ready, i64 dur, double mem, double comp, i64 limit=NEVER_C):
        """Earliest start >= ``ready`` where the demand fits for ``dur`` contiguously."""
        return self._earliest(ready, dur, mem, comp, limit)

    cdef Py_ssize_t _split(self, i64 t) except -1:
        cdef Py_ssize_t idx = self._bisect_left(t)
        if idx < self.n and self._t[idx] == t:
            return idx
        if self.n == self.cap:
            self._grow()
        cdef Py_ssize_t tail = self.n - idx
        if tail > 0:
            memmove(&self._t[idx + 1], &self._t[idx], tail * sizeof(i64))
            memmove(&self._mem[idx + 1], &self._mem[idx], tail * sizeof(double))
            memmove(&self._comp[idx + 1], &self._comp[idx], tail * sizeof(double))
            memmove(&self._cnt[idx + 1], &self._cnt[idx], tail * sizeof(int))
        self._t[idx] = t
        self._mem[idx] = self._mem[idx - 1]
        self._comp[idx] = self._comp[idx - 1]
        self._cnt[idx] = self._cnt[idx - 1]
        self.n += 1
        return idx

    cdef inline bint _same(self, Py_ssize_t a, Py_ssize_t b) nogil:
        return (self._mem[a] == self._mem[b] and self._comp[a] == self._comp[b]
                and self._cnt[a] == self._cnt[b])

    cdef void _drop(self, Py_ssize_t idx) nogil:
        cdef Py_ssize_t tail = self.n - idx - 1
        if tail > 0:
            memmove(&self._t[idx], &self._t[idx + 1], tail * sizeof(i64))
            memmove(&self._mem[idx], &self._mem[idx + 1], tail * sizeof(double))
            memmove(&self._comp[idx], &self._comp[idx + 1], tail * sizeof(double))
            memmove(&self._cnt[idx], &self._cnt[idx + 1], tail * sizeof(int))
        self.n -= 1

    cpdef reserve(self, i64 start, i64 end, double mem, double comp):
        if end <= start:
            raise ValueError("empty reservation")
        if start < self._t[0]:
            raise ValueError("reservation before pruned horizon")
        cdef Py_ssize_t i = self._split(start)
        cdef Py_ssize_t j = self._split(end)
        cdef Py_ssize_t s
        for s in range(i, j):
            self._mem[s] += mem
            self._comp[s] += comp
            self._cnt[s] += 1
        if j < self.n and self._same(j - 1, j):
            self._drop(j)
        if i > 0 and self._same(i - 1, i):
            self._drop(i)

    cpdef prune(self, i64 now):
        cdef Py_ssize_t i = self._bisect_right(now) - 1
        cdef Py_ssize_t tail
        if i > 0:
            tail = self.n - i
            memmove(&self._t[0], &self._t[i], tail * sizeof(i64))
            memmove(&self._mem[0], &self._mem[i], tail * sizeof(double))
            memmove(&self._comp[0], &self._comp[i], tail * sizeof(double))
            memmove(&self._cnt[0], &self._cnt[i], tail * sizeof(int))
            self.n = tail

    def segments(self):
        return [(self._t[i], self._mem[i], self._comp[i], self._cnt[i]) for i in range(self.n)]

    def busy_until(self):
        return self._t[self.n - 1]


cdef int _place(list timelines, i64 ready, i64 dur, double mem, double comp, int prev,
                i64 surcharge, i64 horizon, bint commit, i64* out_start, i64* out_eff) except -3:
    cdef int best_m = -1
    cdef i64 best_key = NEVER_C
    cdef i64 best_start = 0
    cdef i64 best_eff = 0
    cdef int n = len(timelines)
    cdef int idx, m
    cdef i64 s, lim, st
    cdef Timeline tl
    for idx in range(-1 if prev >= 0 else 0, n):
        if idx < 0:
            m = prev
        elif idx == prev:
            continue
        else:
            m = idx
        s = surcharge if (prev >= 0 and m != prev) else 0
        lim = best_key - s
        tl = <Timeline> timelines[m]
        st = tl._earliest(ready, dur + s, mem, comp, lim)
        if st >= 0 and st < lim:
            best_m = m
            best_key = st + s
            best_start = st
            best_eff = dur + s
    out_start[0] = 0
    out_eff[0] = 0
    if best_m == -1:
        return -1
    out_start[0] = best_start
    out_eff[0] = best_eff
    if best_start >= horizon:
        return -2
    if commit:
        (<Timeline> timelines[best_m]).reserve(best_start, best_start + best_eff, mem, comp)
    return best_m


cdef int _place_on(list timelines, int m, i64 ready, i64 dur, double mem, double comp, int prev,
                   i64 surcharge, i64 horizon, bint commit, i64* out_start,
                   i64* out_eff) except -3:
    cdef i64 s = surcharge if (prev >= 0 and m != prev) else 0
    cdef Timeline tl = <Timeline> timelines[m]
    cdef i64 st = tl._earliest(ready, dur + s, mem, comp, NEVER_C)
    out_start[0] = 0
    out_eff[0] = 0
    if st < 0:
        return -1
    out_start[0] = st
    out_eff[0] = dur + s
    if st >= horizon:
        return -2
    if commit:
        tl.reserve(st, st + dur + s, mem, comp)
    return m


def place(list timelines, i64 ready, i64 dur, double mem, double comp, int prev,
          i64 surcharge, i64 horizon, bint commit=True):
    """Pick the machine where the task's work can begin earliest and reserve it."""
    cdef i64 st, eff
    cdef int m = _place(timelines, ready, dur, mem, comp, prev, surcharge, horizon, commit,
                        &st, &eff)
    return m, st, eff


def place_on(list timelines, int m, i64 ready, i64 dur, double mem, double comp, int prev,
             i64 surcharge, i64 horizon, bint commit=True):
    """Earliest placement restricted to machine ``m``."""
    cdef i64 st, eff
    cdef int r = _place_on(timelines, m, ready, dur, mem, comp, prev, surcharge, horizon, commit,
                           &st, &eff)
    return r, st, eff


cdef struct Entry:
    double key
    int job
    int worker


cdef inline bint _less(Entry a, Entry b) nogil:
    if a.key != b.key:
        return a.key < b.key
    if a.job != b.job:
        return a.job < b.job
    return a.worker < b.worker


cdef class Planner:
    """Compiled twin of ``rtspace_py.Planner``."""
    cdef list timelines
    cdef int n_jobs, n_flat, n_machines
    cdef int* offsets
    cdef int* total
    cdef i64* surcharge
    cdef i64* dur
    cdef double* mem
    cdef double* comp
    cdef double* key
    cdef int* prev
    cdef int* iteration
    cdef int* pending
    cdef i64* ready
    cdef i64* maxend
    cdef char* failed
    cdef Entry* heap
    cdef Py_ssize_t heap_n, heap_cap
    cdef Entry* deferred
    cdef i64* rows
    cdef Py_ssize_t rows_n, rows_cap
    cdef int* feasible
    cdef list completions
    cdef list failures
    cdef object refill
    cdef double[::1] rand
    cdef Py_ssize_t rand_pos

    def __cinit__(self, timelines, offsets, total_iterations, surcharge, dur, mem, comp, key,
                  refill=None):
        cdef Py_ssize_t i
        self.timelines = list(timelines)
        self.n_machines = len(self.timelines)
        self.n_jobs = len(total_iterations)
        self.n_flat = offsets[len(offsets) - 1]
        nj = max(self.n_jobs, 1)
        nf = max(self.n_flat, 1)
        self.offsets = <int*> malloc((nj + 1) * sizeof(int))
        self.total = <int*> malloc(nj * sizeof(int))
        self.surcharge = <i64*> malloc(nj * sizeof(i64))
        self.iteration = <int*> malloc(nj * sizeof(int))
        self.pending = <int*> malloc(nj * sizeof(int))
        self.ready = <i64*> malloc(nj * sizeof(i64))
        self.maxend = <i64*> malloc(nj * sizeof(i64))
        self.failed = <char*> malloc(nj * sizeof(char))
        self.dur = <i64*> malloc(nf * sizeof(i64))
        self.mem = <double*> malloc(nf * sizeof(double))
        self.comp = <double*> malloc(nf * sizeof(double))
        self.key = <double*> malloc(nf * sizeof(double))
        self.prev = <int*> malloc(nf * sizeof(int))
        self.heap_cap = nf
        self.heap = <Entry*> malloc(nf * sizeof(Entry))
        self.deferred = <Entry*> malloc(nf * sizeof(Entry))
        self.rows_cap = 7 * 4096
        self.rows = <i64*> malloc(self.rows_cap * sizeof(i64))
        self.feasible = <int*> malloc(max(self.n_machines, 1) * sizeof(int))
        if (not self.offsets or not self.total or not self.surcharge or not self.iteration
                or not self.pending or not self.ready or not self.maxend or not self.failed
                or not self.dur or not self.mem or not self.comp or not self.key
                or not self.prev or not self.heap or not self.deferred or not self.rows
                or not self.feasible):
            raise MemoryError()
        for i in range(self.n_jobs + 1):
            self.offsets[i] = offsets[i]
        for i in range(self.n_jobs):
            self.total[i] = total_iterations[i]
            self.surcharge[i] = surcharge[i]
            self.iteration[i] = 0
            self.pending[i] = 0
            self.ready[i] = 0
            self.maxend[i] = 0
            self.failed[i] = 0
        for i in range(self.n_flat):
            self.dur[i] = dur[i]
            self.mem[i] = mem[i]
            self.comp[i] = comp[i]
            self.key[i] = key[i]
            self.prev[i] = -1
        self.heap_n = 0
        self.rows_n = 0
        self.completions = []
        self.failures = []
        self.refill = refill
        self.rand = None
        self.rand_pos = 0

    def __dealloc__(self):
        free(self.offsets)
        free(self.total)
        free(self.surcharge)
        free(self.iteration)
        free(self.pending)
        free(self.ready)
        free(self.maxend)
        free(self.failed)
        free(self.dur)
        free(self.mem)
        free(self.comp)
        free(self.key)
        free(self.prev)
        free(self.heap)
        free(self.deferred)
        free(self.rows)
        free(self.feasible)

    cdef void _heap_push(self, Entry e) nogil:
        cdef Py_ssize_t i = self.heap_n
        cdef Py_ssize_t parent
        self.heap_n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if _less(e, self.heap[parent]):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = e

    cdef Entry _heap_pop(self) nogil:
        cdef Entry top = self.heap[0]
        cdef Entry last
        cdef Py_ssize_t i = 0, c, n
        self.heap_n -= 1
        n = self.heap_n
        if n > 0:
            last = self.heap[n]
            while True:
                c = 2 * i + 1
                if c >= n:
                    break
                if c + 1 < n and _less(self.heap[c + 1], self.heap[c]):
                    c += 1
                if _less(self.heap[c], last):
                    self.heap[i] = self.heap[c]
                    i = c
                else:
                    break
            self.heap[i] = last
        return top

    cdef void _push_iteration(self, int job) nogil:
        cdef int lo = self.offsets[job], hi = self.offsets[job + 1], f
        cdef Entry e
        self.pending[job] = hi - lo
        for f in range(lo, hi):
            e.key = self.key[f]
            e.job = job
            e.worker = f - lo
            self._heap_push(e)

    def submit(self, int job, i64 ready):
        if job < 0 or job >= self.n_jobs:
            raise IndexError(job)
        if self.iteration[job] != 0:
            raise ValueError(f"job {job} submitted twice")
        self.iteration[job] = 1
        self.ready[job] = ready
        self.maxend[job] = 0
        self._push_iteration(job)

    def active(self):
        return self.heap_n > 0

    cdef int _random_machine(self, double mem, double comp) except -3:
        cdef int nf = 0, m
        cdef double u
        for m in range(self.n_machines):
            if (<Timeline> self.timelines[m]).fits(mem, comp):
                self.feasible[nf] = m
                nf += 1
        if nf == 0:
            return -1
        if self.rand is None or self.rand_pos >= self.rand.shape[0]:
            import numpy as np
            self.rand = np.ascontiguousarray(self.refill(), dtype=np.float64)
            self.rand_pos = 0
        u = self.rand[self.rand_pos]
        self.rand_pos += 1
        return self.feasible[<int> (u * nf)]

    cdef void _emit(self, i64 a, i64 b, i64 c, i64 d, i64 e, i64 f, i64 g) except *:
        cdef i64* grown
        if self.rows_n + 7 > self.rows_cap:
            grown = <i64*> realloc(self.rows, 2 * self.rows_cap * sizeof(i64))
            if not grown:
                raise MemoryError()
            self.rows = grown
            self.rows_cap *= 2
        cdef i64* r = self.rows + self.rows_n
        r[0] = a
        r[1] = b
        r[2] = c
        r[3] = d
        r[4] = e
        r[5] = f
        r[6] = g
        self.rows_n += 7

    def run_interval(self, i64 now, i64 horizon):
        """Commit queued tasks starting before ``horizon``; returns the number placed."""
        cdef Py_ssize_t i, n_def = 0
        cdef Entry e
        cdef int job, w, f, m, prev
        cdef i64 ready, start, eff, end
        cdef long placed = 0
        cdef bint random_mode = self.refill is not None
        cdef list tls = self.timelines
        for i in range(self.n_machines):
            (<Timeline> tls[i]).prune(now)
        while self.heap_n > 0:
            e = self._heap_pop()
            job = e.job
            w = e.worker
            if self.failed[job]:
                continue
            f = self.offsets[job] + w
            ready = self.ready[job]
            if ready < now:
                ready = now
            prev = self.prev[f]
            if random_mode:
                m = self._random_machine(self.mem[f], self.comp[f])
                if m >= 0:
                    m = _place_on(tls, m, ready, self.dur[f], self.mem[f], self.comp[f], prev,
                                  self.surcharge[job], horizon, True, &start, &eff)
            else:
                m = _place(tls, ready, self.dur[f], self.mem[f], self.comp[f], prev,
                           self.surcharge[job], horizon, True, &start, &eff)
            if m < 0:
                if m == -2:
                    self.deferred[n_def] = e
                    n_def += 1
                else:
                    self.failed[job] = 1
                    self.failures.append(job)
                continue
            end = start + eff
            self._emit(job, w, self.iteration[job], m, start, end,
                       1 if (prev >= 0 and m != prev) else 0)
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
        for i in range(n_def):
            self._heap_push(self.deferred[i])
        return placed

    def take_rows(self):
        """Buffered rows as a flat int64 array; clears the buffer."""
        import numpy as np
        out = np.empty(self.rows_n, dtype=np.int64)
        cdef i64[::1] view = out
        cdef Py_ssize_t i
        for i in range(self.rows_n):
            view[i] = self.rows[i]
        self.rows_n = 0
        return out

    def take_completions(self):
        out = self.completions
        self.completions = []
        return out

    def take_failures(self):
        out = self.failures
        self.failures = []
        return out
