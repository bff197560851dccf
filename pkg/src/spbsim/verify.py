"""Self-check suite for the SPB numerics, run by ``spbsim verify``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import spb_core as sc
from .oracle import coverage_oracle, variance_oracle


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _fd_gradient(model: sc.LayeredModel, h: float = 1e-6) -> np.ndarray:
    x = model.flat()
    g = np.empty_like(x)
    m = model.copy()
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        m.set_flat(x + e)
        up = m.loss()
        m.set_flat(x - e)
        g[i] = (up - m.loss()) / (2 * h)
    return g


def check_gradient(k: int, L: int = 6, seed: int = 0) -> CheckResult:
    m = sc.make_chain_mlp(L, seed=seed)
    ana = m.full_gradient_flat()
    num = _fd_gradient(m)
    err = float(np.max(np.abs(ana - num)) / max(1.0, float(np.max(np.abs(num)))))
    return CheckResult("gradient-finite-difference", err < 1e-6, f"max rel err {err:.2e}")


def check_suffix(k: int, L: int = 6, seed: int = 0) -> CheckResult:
    m = sc.make_chain_mlp(L, seed=seed)
    batch = np.arange(m.n_samples)
    full = m.gradient(batch)
    bad = []
    for j in range(1, k + 1):
        s = sc.suffix_layers(j, k, L)
        before = list(m.backward_calls)
        g = sc.partial_backprop(m, batch, s)
        calls = [a - b for a, b in zip(m.backward_calls, before)]
        expect = [1 if l >= L - s else 0 for l in range(L)]
        if calls != expect:
            bad.append(f"worker {j}: layer calls {calls}")
        for l in range(L):
            if g.present(l + 1) and not np.array_equal(g.blocks[l], full[l]):
                bad.append(f"worker {j}: layer {l + 1} differs from full backprop")
    return CheckResult("suffix-exactness", not bad, "; ".join(bad) or f"k={k}, L={L}")


def check_coverage(k: int) -> CheckResult:
    bad = []
    for L in sorted({k, 2 * k, 3 * k + 1, 7}):
        if L < 1 or L > 64:
            continue
        cov = coverage_oracle(k, L)
        for layer in range(1, L + 1):
            m = sc.layer_chunk(layer, k, L)
            if cov.per_layer[layer - 1] != len(sc.chunk_coverage(m, k)):
                bad.append(f"L={L} layer {layer}")
        if L % k == 0 and cov.chunks != tuple(range(1, k + 1)):
            bad.append(f"L={L} chunks {cov.chunks}")
    return CheckResult("coverage-law", not bad, "; ".join(bad) or f"chunk m has m workers (k={k})")


def variance_point(model: sc.LayeredModel, offset: float = 0.3) -> np.ndarray:
    """Evaluation point away from the optimum, where the gradient noise is not trivial."""
    return model.optimum() + offset


def check_variance(k: int, B: int, trials: int, seed: int = 0) -> list[CheckResult]:
    model = sc.make_convex_quadratic(seed=seed)
    x = variance_point(model)
    cfg = sc.SpbConfig(k=k, B=B)
    est = sc.empirical_variance(model, cfg, trials, seed=seed, x=x)
    P = est.P
    out = []
    base_bound = sc.minibatch_bound(P, k, B)
    out.append(CheckResult(
        "variance-minibatch-bound", est.baseline_mean - 3 * est.baseline_se <= base_bound,
        f"estimate {est.baseline_mean:.4g} +- {est.baseline_se:.2g} vs 2P^2k/B {base_bound:.4g}"))
    if k == 1:
        same = math.isclose(est.spb_mean, est.baseline_mean, rel_tol=1e-9)
        out.append(CheckResult("variance-k1-degenerate", same,
                               f"spb {est.spb_mean:.6g} vs minibatch {est.baseline_mean:.6g}"))
    else:
        spb_bound = sc.spb_bound(P, k, B)
        out.append(CheckResult(
            "variance-spb-bound", est.spb_mean - 3 * est.spb_se <= spb_bound,
            f"estimate {est.spb_mean:.4g} +- {est.spb_se:.2g} vs 2P^2(k/B)log2k {spb_bound:.4g}"))
    orc = variance_oracle(model, cfg, x=x, trials=trials, seed=seed)
    se = math.hypot(est.spb_se, orc.harmonic_se)
    out.append(CheckResult(
        "variance-harmonic-identity", abs(est.spb_mean - orc.harmonic) <= 3 * se,
        f"spb {est.spb_mean:.4g} vs sum k/(iB) p_i {orc.harmonic:.4g} (3SE {3 * se:.2g})"))
    return out


def check_unbiased(k: int, B: int, trials: int, seed: int = 0) -> CheckResult:
    model = sc.make_convex_quadratic(seed=seed)
    m = model.copy()
    m.set_flat(variance_point(model))
    grad = m.full_gradient_flat()
    idx = sc.make_rng(seed, 3).integers(0, m.n_samples, size=(trials, B))
    est = sc.spb_estimates(m, idx, k)
    z = (est.mean(axis=0) - grad) / (est.std(axis=0, ddof=1) / math.sqrt(trials))
    worst = float(np.max(np.abs(z)))
    # Bonferroni-style allowance across coordinates
    return CheckResult("spb-unbiased", worst < 4.5, f"max |z| over coordinates {worst:.2f}")


def check_convergence(k: int, B: int, t: int, seed: int = 0) -> CheckResult:
    model = sc.make_convex_quadratic(seed=seed)
    traj = sc.spb_sgd_run(model, sc.SpbConfig(k=k, B=B), t, schedule="theorem1", seed=seed)
    bound = traj.bound()
    return CheckResult("convergence-bound", traj.final_suboptimality <= bound,
                       f"suboptimality {traj.final_suboptimality:.4g} vs bound {bound:.4g} "
                       f"(R={traj.R:.3g}, V={traj.V:.3g}, beta={traj.beta:.3g}, t={t})")


def run_suite(k: int = 4, B: int | None = None, trials: int = 10_000, t: int = 5000,
              seed: int = 0, progress: Callable[[CheckResult], None] | None = None
              ) -> list[CheckResult]:
    B = 16 * k if B is None else B
    results: list[CheckResult] = []

    def add(r):
        results.append(r)
        if progress:
            progress(r)

    add(check_gradient(k, seed=seed))
    add(check_suffix(k, L=max(6, k), seed=seed))
    add(check_coverage(k))
    add(check_unbiased(k, B, min(trials, 4000), seed=seed))
    for r in check_variance(k, B, trials, seed=seed):
        add(r)
    add(check_convergence(k, B, t, seed=seed))
    return results
