"""Structured partial backprop: suffix gradients, weighted aggregation, SGD.

Worker ``j`` of ``k`` backpropagates through the last ``ceil(j * L / k)``
layers of an ``L``-layer model. The parameter server averages each layer
over the workers that actually produced it, so input-side chunk ``m`` is an
average of ``m`` worker gradients.

Layer and worker indices are 1-based throughout, matching the protocol
description; Python lists holding per-layer data are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ProtocolError
from .rng import make_rng

CHAIN_MLP = "chain-mlp"
CONVEX_QUADRATIC = "convex-quadratic"


# --------------------------------------------------------------------------
# suffix rule and chunk bookkeeping

def suffix_layers(j: int, k: int, L: int) -> int:
    """Number of output-side layers worker ``j`` of ``k`` backpropagates."""
    if k < 1 or L < 1:
        raise ValueError(f"need k >= 1 and L >= 1, got k={k}, L={L}")
    if not 1 <= j <= k:
        raise ValueError(f"worker index {j} outside 1..{k}")
    return -(-j * L // k)


def chunk_coverage(m: int, k: int) -> frozenset[int]:
    """Workers contributing to input-side chunk ``m``."""
    if not 1 <= m <= k:
        raise ValueError(f"chunk index {m} outside 1..{k}")
    return frozenset(range(k - m + 1, k + 1))


def chunk_bounds(k: int, L: int) -> list[tuple[int, int]]:
    """Inclusive 1-based layer range of each input-side chunk; empty when first > last.

    Cut points follow the suffix rule, so chunk ``m`` holds the layers that
    worker ``k - m + 1`` computes and worker ``k - m`` does not.
    """
    cuts = [0] + [suffix_layers(j, k, L) for j in range(1, k + 1)]
    return [(L - cuts[k - m + 1] + 1, L - cuts[k - m]) for m in range(1, k + 1)]


def layer_chunk(layer: int, k: int, L: int) -> int:
    for m, (lo, hi) in enumerate(chunk_bounds(k, L), start=1):
        if lo <= layer <= hi:
            return m
    raise ValueError(f"layer {layer} outside 1..{L}")


def first_covered_layer(j: int, k: int, L: int) -> int:
    return L - suffix_layers(j, k, L) + 1


# --------------------------------------------------------------------------
# models

@dataclass
class LayeredModel:
    """An L-block differentiable model with a finite dataset.

    ``chain-mlp``: tanh layers followed by a scalar affine output, loss is the
    batch mean of ``0.5 * (y_hat - y)**2``. Block ``l`` stores ``W_l`` (row
    major) followed by ``b_l``.

    ``convex-quadratic``: ``f(x) = mean_i 0.5 * (a_i . x - b_i)**2`` with ``x``
    split into ``L`` contiguous blocks.
    """

    kind: str
    layers: list[np.ndarray]
    inputs: np.ndarray
    targets: np.ndarray
    shapes: list[tuple[int, int]] = field(default_factory=list)
    beta: float | None = None
    backward_calls: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in (CHAIN_MLP, CONVEX_QUADRATIC):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if not self.layers:
            raise ConfigurationError("model needs at least one layer")
        if any(np.asarray(b).size == 0 for b in self.layers):
            raise ConfigurationError("parameter blocks must be non-empty")
        self.layers = [np.asarray(b, dtype=np.float64).copy() for b in self.layers]
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.kind == CONVEX_QUADRATIC:
            if self.inputs.shape[1] != sum(b.size for b in self.layers):
                raise ConfigurationError("design matrix width must match parameter count")
            if np.linalg.matrix_rank(self.inputs) < self.inputs.shape[1]:
                raise ConfigurationError("design matrix must have full column rank")
            if self.beta is None:
                hess = self.inputs.T @ self.inputs / self.n_samples
                self.beta = float(np.linalg.eigvalsh(hess)[-1])
        if not self.backward_calls:
            self.backward_calls = [0] * len(self.layers)

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def block_sizes(self) -> list[int]:
        return [b.size for b in self.layers]

    def block_slices(self) -> list[slice]:
        out, start = [], 0
        for size in self.block_sizes:
            out.append(slice(start, start + size))
            start += size
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)

    def set_flat(self, x: np.ndarray) -> None:
        for sl, i in zip(self.block_slices(), range(self.L)):
            self.layers[i] = np.array(x[sl], dtype=np.float64)

    def copy(self) -> "LayeredModel":
        return LayeredModel(self.kind, [b.copy() for b in self.layers], self.inputs,
                            self.targets, list(self.shapes), self.beta)

    # -- chain-mlp helpers
    def _unpack(self, l):
        out_dim, in_dim = self.shapes[l]
        block = self.layers[l]
        return block[: out_dim * in_dim].reshape(out_dim, in_dim), block[out_dim * in_dim:]

    def _forward(self, idx):
        h = [self.inputs[idx]]
        for l in range(self.L):
            W, b = self._unpack(l)
            z = h[-1] @ W.T + b
            h.append(z if l == self.L - 1 else np.tanh(z))
        return h

    def loss(self, idx=None) -> float:
        idx = np.arange(self.n_samples) if idx is None else np.asarray(idx)
        if self.kind == CONVEX_QUADRATIC:
            r = self.inputs[idx] @ self.flat() - self.targets[idx]
        else:
            r = self._forward(idx)[-1][:, 0] - self.targets[idx]
        return float(0.5 * np.mean(r * r))

    def gradient(self, idx=None) -> list[np.ndarray]:
        idx = np.arange(self.n_samples) if idx is None else idx
        return partial_backprop(self, idx, self.L).blocks

    def full_gradient_flat(self) -> np.ndarray:
        return np.concatenate(self.gradient())

    def per_sample_gradients(self, idx) -> np.ndarray:
        """Rows are flattened single-sample gradients."""
        idx = np.asarray(idx)
        if self.kind == CONVEX_QUADRATIC:
            A = self.inputs[idx]
            r = A @ self.flat() - self.targets[idx]
            return A * r[:, None]
        return np.stack([np.concatenate(self.gradient(np.array([i]))) for i in idx])

    # -- convex-quadratic helpers
    def optimum(self) -> np.ndarray:
        if self.kind != CONVEX_QUADRATIC:
            raise ConfigurationError("closed-form optimum only for convex-quadratic")
        return np.linalg.lstsq(self.inputs, self.targets, rcond=None)[0]

    def hessian(self) -> np.ndarray:
        return self.inputs.T @ self.inputs / self.n_samples


def make_chain_mlp(L: int, width: int = 4, input_dim: int = 3, n_samples: int = 32,
                   seed: int = 0) -> LayeredModel:
    rng = make_rng(seed, 1)
    shapes, layers = [], []
    prev = input_dim
    for l in range(L):
        out = 1 if l == L - 1 else width
        W = rng.normal(0.0, 1.0 / math.sqrt(prev), size=(out, prev))
        b = rng.normal(0.0, 0.1, size=out)
        shapes.append((out, prev))
        layers.append(np.concatenate([W.ravel(), b]))
        prev = out
    X = rng.normal(size=(n_samples, input_dim))
    y = np.sin(X.sum(axis=1))
    return LayeredModel(CHAIN_MLP, layers, X, y, shapes)


def make_convex_quadratic(L: int = 8, block_size: int = 2, n_samples: int = 1024,
                          noise: float = 1.0, seed: int = 0) -> LayeredModel:
    rng = make_rng(seed, 2)
    d = L * block_size
    A = rng.normal(size=(n_samples, d))
    x_true = rng.normal(size=d)
    b = A @ x_true + noise * rng.normal(size=n_samples)
    x0 = np.zeros(d)
    return LayeredModel(CONVEX_QUADRATIC, np.split(x0, L), A, b)


# --------------------------------------------------------------------------
# partial gradients

@dataclass
class PartialGradient:
    blocks: list[np.ndarray | None]
    covered_from: int

    def __post_init__(self):
        L = len(self.blocks)
        if not 1 <= self.covered_from <= L + 1:
            raise ProtocolError(f"covered_from {self.covered_from} outside 1..{L + 1}")
        for l, blk in enumerate(self.blocks, start=1):
            if (blk is None) != (l < self.covered_from):
                raise ProtocolError(f"block {l} presence disagrees with covered_from")

    @property
    def L(self) -> int:
        return len(self.blocks)

    def present(self, layer: int) -> bool:
        return layer >= self.covered_from


def partial_backprop(model: LayeredModel, batch, suffix: int) -> PartialGradient:
    """Gradient of the batch-mean loss for the last ``suffix`` layers only.

    The reverse pass stops at layer ``L - suffix + 1``; the suffix blocks are
    computed by the same code path as a full backward pass.
    """
    L = model.L
    if not 1 <= suffix <= L:
        raise ValueError(f"suffix {suffix} outside 1..{L}")
    idx = np.asarray(batch)
    if idx.size == 0:
        raise ValueError("empty batch")
    n = idx.size
    stop = L - suffix  # 0-based index of the lowest computed layer
    blocks: list[np.ndarray | None] = [None] * L
    if model.kind == CONVEX_QUADRATIC:
        A = model.inputs[idx]
        r = A @ model.flat() - model.targets[idx]
        for l, sl in zip(range(L - 1, stop - 1, -1), reversed(model.block_slices())):
            blocks[l] = A[:, sl].T @ r / n
            model.backward_calls[l] += 1
        return PartialGradient(blocks, stop + 1)

    h = model._forward(idx)
    delta = (h[-1] - model.targets[idx][:, None]) / n
    for l in range(L - 1, stop - 1, -1):
        W, _ = model._unpack(l)
        blocks[l] = np.concatenate([(delta.T @ h[l]).ravel(), delta.sum(axis=0)])
        model.backward_calls[l] += 1
        if l > stop:
            delta = (delta @ W) * (1.0 - h[l] ** 2)
    return PartialGradient(blocks, stop + 1)


def aggregate(grads: list[PartialGradient], k: int) -> list[np.ndarray]:
    """Weighted parameter-server average: each layer divided by its contributor count."""
    if len(grads) != k:
        raise ProtocolError(f"expected {k} partial gradients, got {len(grads)}")
    L = grads[0].L
    for j, g in enumerate(grads, start=1):
        if g.L != L:
            raise ProtocolError("partial gradients disagree on layer count")
        if g.covered_from != first_covered_layer(j, k, L):
            raise ProtocolError(
                f"worker {j} covers from layer {g.covered_from}, "
                f"suffix rule requires {first_covered_layer(j, k, L)}")
    out = []
    for layer in range(1, L + 1):
        total = None
        count = 0
        for g in grads:
            if g.present(layer):
                blk = g.blocks[layer - 1]
                total = blk.copy() if total is None else total + blk
                count += 1
        out.append(total / count)
    return out


def coverage_mask(k: int, L: int) -> np.ndarray:
    """Boolean (k, L) table: worker j computes layer l."""
    mask = np.zeros((k, L), dtype=bool)
    for j in range(1, k + 1):
        mask[j - 1, first_covered_layer(j, k, L) - 1:] = True
    return mask


# --------------------------------------------------------------------------
# configuration and bounds

@dataclass(frozen=True)
class SpbConfig:
    k: int
    B: int
    lr_base: float = 0.05
    P: float | None = None
    R: float | None = None
    V: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.B < 1 or self.B % self.k:
            raise ConfigurationError(f"global batch {self.B} not divisible by k={self.k}")
        for name in ("P", "R", "V"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr_base <= 0:
            raise ConfigurationError("lr_base must be positive")


def minibatch_bound(P: float, k: int, B: int) -> float:
    return 2.0 * P * P * k / B


def spb_bound(P: float, k: int, B: int) -> float:
    return 2.0 * P * P * (k / B) * math.log2(k)


def harmonic_variance(p: np.ndarray, k: int, B: int) -> float:
    """``sum_i k / (i B) * p_i`` over input-side chunks."""
    p = np.asarray(p, dtype=np.float64)
    return float(sum(k / (i * B) * p[i - 1] for i in range(1, k + 1)))


def convergence_bound(R: float, V: float, beta: float, t: int) -> float:
    return R * math.sqrt(2.0 * V * V / t) + beta * R * R / t


def max_sample_gradient_norm(model: LayeredModel, x: np.ndarray | None = None) -> float:
    """P measured as the largest per-sample gradient norm over the dataset at ``x``."""
    m = model
    if x is not None:
        m = model.copy()
        m.set_flat(x)
    G = m.per_sample_gradients(np.arange(m.n_samples))
    return float(np.sqrt((G * G).sum(axis=1)).max())


def exact_noise(model: LayeredModel, x: np.ndarray, k: int, B: int) -> tuple[float, float]:
    """Population ``E||grad f - g~||^2`` at ``x`` for SPB and for plain mini-batch SGD.

    Uses per-sample variances over the whole dataset and i.i.d. sampling with
    replacement, so no Monte-Carlo error.
    """
    m = model.copy()
    m.set_flat(x)
    G = m.per_sample_gradients(np.arange(m.n_samples))
    dev = G - G.mean(axis=0)
    coord_var = (dev * dev).mean(axis=0)
    per_layer = np.array([coord_var[sl].sum() for sl in m.block_slices()])
    contributors = coverage_mask(k, m.L).sum(axis=0)
    spb = float(np.sum(per_layer * k / (contributors * B)))
    return spb, float(per_layer.sum() / B)


# --------------------------------------------------------------------------
# SGD

@dataclass
class Trajectory:
    iteration: np.ndarray
    loss: np.ndarray
    suboptimality: np.ndarray
    step_size: np.ndarray
    last_suboptimality: np.ndarray
    x_avg: np.ndarray
    x_last: np.ndarray
    R: float
    V: float
    beta: float
    f_star: float

    @property
    def final_suboptimality(self) -> float:
        return float(self.suboptimality[-1])

    def bound(self) -> float:
        return convergence_bound(self.R, self.V, self.beta, len(self.iteration))

    def iterations_to(self, target_subopt: float, averaged: bool = True) -> int:
        """First iteration reaching the target suboptimality; len+1 if never."""
        curve = self.suboptimality if averaged else self.last_suboptimality
        hit = np.nonzero(curve <= target_subopt)[0]
        return int(self.iteration[hit[0]]) if hit.size else len(self.iteration) + 1

    def write_csv(self, path: str | Path) -> None:
        from .ioutil import atomic_write_text
        lines = ["iteration,loss,suboptimality,step_size"]
        for i, l, s, e in zip(self.iteration, self.loss, self.suboptimality, self.step_size):
            lines.append(f"{int(i)},{l!r},{s!r},{e!r}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def _project(x, center, radius):
    d = x - center
    n = float(np.sqrt(d @ d))
    return x if n <= radius else center + d * (radius / n)


def noise_bound(model: LayeredModel, k: int, B: int, radius: float, center: np.ndarray,
                n_points: int = 256, seed: int = 0) -> float:
    """V measured as the largest exact SPB noise over sampled points of the domain ball.

    The noise is a convex function of ``x``, so boundary points dominate; the
    center and the optimum are included as well.
    """
    rng = make_rng(seed, 7)
    d = center.size
    dirs = rng.normal(size=(n_points, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    evecs = np.linalg.eigh(model.hessian())[1].T if model.kind == CONVEX_QUADRATIC else np.empty((0, d))
    pts = [center, model.optimum()] + [center + radius * u for u in dirs]
    pts += [center + s * radius * u for u in evecs for s in (1.0, -1.0)]
    return math.sqrt(max(exact_noise(model, p, k, B)[0] for p in pts))


def spb_sgd_run(model: LayeredModel, cfg: SpbConfig, t: int, schedule: str = "theorem1",
                seed: int = 0, radius: float | None = None,
                x0: np.ndarray | None = None) -> Trajectory:
    """Projected SPB-SGD on a convex-quadratic model.

    The domain is a ball around the starting point whose diameter is ``R``.
    With ``schedule="theorem1"`` the fixed step is ``1 / (beta + 1/eta)`` with
    ``eta = (R / V) * sqrt(2 / t)``; ``"constant"`` uses ``cfg.lr_base``.
    Each iteration draws ``B`` indices with replacement and hands worker ``j``
    the ``j``-th contiguous slice of ``B / k``.
    """
    if model.kind != CONVEX_QUADRATIC:
        raise ConfigurationError("spb_sgd_run needs a convex-quadratic model")
    if schedule not in ("theorem1", "constant"):
        raise ConfigurationError(f"unknown schedule {schedule!r}")
    if t < 1:
        raise ValueError("t must be >= 1")
    k, B, L = cfg.k, cfg.B, model.L
    work = model.copy()
    center = np.zeros(sum(work.block_sizes)) if x0 is None else np.asarray(x0, dtype=np.float64)
    x_star = work.optimum()
    if radius is None:
        radius = max(2.0 * float(np.linalg.norm(x_star - center)), 1.0)
    R = cfg.R if cfg.R is not None else 2.0 * radius
    V = cfg.V if cfg.V is not None else noise_bound(work, k, B, radius, center, seed=seed)
    beta = float(work.beta)
    if schedule == "theorem1":
        eta = (R / V) * math.sqrt(2.0 / t)
        step = 1.0 / (beta + 1.0 / eta)
    else:
        step = cfg.lr_base

    H = work.hessian()
    sub_of = lambda z: 0.5 * float((z - x_star) @ H @ (z - x_star))
    work.set_flat(x_star)
    f_star = work.loss()

    rng = make_rng(seed, 11)
    suffixes = [suffix_layers(j, k, L) for j in range(1, k + 1)]
    per = B // k
    x = center.copy()
    work.set_flat(x)
    running = np.zeros_like(x)
    subs = np.empty(t)
    last = np.empty(t)
    for s in range(1, t + 1):
        idx = rng.integers(0, work.n_samples, size=B)
        grads = [partial_backprop(work, idx[j * per:(j + 1) * per], suffixes[j]) for j in range(k)]
        g = np.concatenate(aggregate(grads, k))
        x = _project(x - step * g, center, radius)
        work.set_flat(x)
        running += x
        subs[s - 1] = sub_of(running / s)
        last[s - 1] = sub_of(x)
    its = np.arange(1, t + 1)
    return Trajectory(
        iteration=its,
        loss=subs + f_star,
        suboptimality=subs,
        step_size=np.full(t, step),
        last_suboptimality=last,
        x_avg=running / t,
        x_last=x,
        R=R,
        V=V,
        beta=beta,
        f_star=f_star,
    )


# --------------------------------------------------------------------------
# Monte-Carlo noise estimates

@dataclass
class VarianceEstimate:
    k: int
    B: int
    trials: int
    spb_mean: float
    spb_se: float
    baseline_mean: float
    baseline_se: float
    chunk_p: np.ndarray
    chunk_p_se: np.ndarray
    P: float


def spb_estimates(model: LayeredModel, idx: np.ndarray, k: int) -> np.ndarray:
    """Vectorized SPB aggregate for each row of ``idx`` (trials, B); returns (trials, d)."""
    trials, B = idx.shape
    per = B // k
    G = model.per_sample_gradients(idx.ravel()).reshape(trials, k, per, -1)
    W = G.mean(axis=2)
    mask = np.zeros((k, W.shape[-1]))
    cov = coverage_mask(k, model.L)
    for sl, l in zip(model.block_slices(), range(model.L)):
        mask[:, sl] = cov[:, l][:, None]
    return (W * mask).sum(axis=1) / mask.sum(axis=0)


def empirical_variance(model: LayeredModel, cfg: SpbConfig, trials: int, seed: int = 0,
                       x: np.ndarray | None = None, chunk_trials: int = 2048) -> VarianceEstimate:
    """Monte-Carlo ``E||grad f - g~||^2`` at ``x`` for SPB and for full-gradient workers.

    Batch indices for all trials come from one ``(trials, B)`` draw of the
    ``make_rng(seed)`` stream, so two calls with the same seed see the same
    samples regardless of ``k``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    k, B = cfg.k, cfg.B
    m = model.copy()
    if x is not None:
        m.set_flat(x)
    grad = m.full_gradient_flat()
    idx_all = make_rng(seed).integers(0, m.n_samples, size=(trials, B))
    chunks = chunk_bounds(k, m.L)
    slices = m.block_slices()
    chunk_cols = []
    for lo, hi in chunks:
        cols = [np.arange(sl.start, sl.stop) for sl in slices[lo - 1:hi]]
        chunk_cols.append(np.concatenate(cols) if cols else np.array([], dtype=int))
    spb_sq = np.empty(trials)
    base_sq = np.empty(trials)
    chunk_sq = np.empty((trials, k))
    for start in range(0, trials, chunk_trials):
        idx = idx_all[start:start + chunk_trials]
        est = spb_estimates(m, idx, k)
        dev = est - grad
        sq = dev * dev
        spb_sq[start:start + len(idx)] = sq.sum(axis=1)
        for c, cols in enumerate(chunk_cols):
            chunk_sq[start:start + len(idx), c] = sq[:, cols].sum(axis=1)
        base = m.per_sample_gradients(idx.ravel()).reshape(len(idx), B, -1).mean(axis=1)
        bdev = base - grad
        base_sq[start:start + len(idx)] = (bdev * bdev).sum(axis=1)
    scale = np.array([i * B / k for i in range(1, k + 1)])
    se = lambda a: float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else float("inf")
    return VarianceEstimate(
        k=k, B=B, trials=trials,
        spb_mean=float(spb_sq.mean()), spb_se=se(spb_sq),
        baseline_mean=float(base_sq.mean()), baseline_se=se(base_sq),
        chunk_p=chunk_sq.mean(axis=0) * scale,
        chunk_p_se=np.array([se(chunk_sq[:, c]) for c in range(k)]) * scale,
        P=max_sample_gradient_norm(m),
    )
