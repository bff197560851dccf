import numpy as np
import pytest

from helpers import chain_job
from spbsim import spb_core as sc
from spbsim.errors import InstanceTooLargeError
from spbsim.oracle import (MAX_TASKS, coverage_oracle, optimal_makespan, random_instance,
                           variance_oracle)
from spbsim.scheduler import ClusterSpec, SchedulerConfig, plan_jobs, validate_schedule


def test_serialized_on_one_gpu():
    jobs = [chain_job("a", ms=10.0, iterations=1), chain_job("b", ms=10.0, iterations=1)]
    assert optimal_makespan(jobs, 1).makespan == 20_000


def test_parallel_on_two_gpus():
    jobs = [chain_job("a", ms=10.0, iterations=1), chain_job("b", ms=10.0, iterations=1)]
    assert optimal_makespan(jobs, 2).makespan == 10_000


def test_too_large_refused():
    jobs = [chain_job(f"j{i}", iterations=3) for i in range(5)]
    with pytest.raises(InstanceTooLargeError):
        optimal_makespan(jobs, 2)
    with pytest.raises(InstanceTooLargeError):
        optimal_makespan([chain_job(iterations=4)], 1)
    with pytest.raises(InstanceTooLargeError):
        optimal_makespan([chain_job()], 4)


def test_oracle_beats_or_ties_jigsaw_and_validates():
    cfg = SchedulerConfig()
    for seed in range(15):
        jobs, nm = random_instance(seed)
        assert sum(j.k * j.total_iterations for j in jobs) <= MAX_TASKS
        plan, _ = plan_jobs(jobs, ClusterSpec(nm), cfg)
        opt = optimal_makespan(jobs, nm, cfg)
        assert opt.makespan <= plan.makespan()
        assert opt.plan.makespan() == opt.makespan
        assert validate_schedule(opt.plan, ClusterSpec(nm), jobs, cfg) == []


def test_upper_bound_hint_keeps_result():
    jobs, nm = random_instance(4)
    a = optimal_makespan(jobs, nm)
    b = optimal_makespan(jobs, nm, upper_bound=a.makespan)
    assert a.makespan == b.makespan


def test_migration_cost_respected():
    # two iterations; moving to the free GPU costs 0.8 ms/MB * 100 MB = 80 ms
    jobs = [chain_job("a", ms=10.0, iterations=2, grad_mb=100.0, mem=10.0),
            chain_job("b", ms=15.0, iterations=1, mem=10.0)]
    opt = optimal_makespan(jobs, 2)
    assert opt.makespan == 20_000
    assert opt.plan.migrated.sum() == 0


def test_coverage_examples():
    assert coverage_oracle(4, 8).chunks == (1, 2, 3, 4)
    assert coverage_oracle(1, 5).chunks == (1,)
    cov = coverage_oracle(3, 7)
    assert cov.per_layer == (1, 1, 2, 2, 3, 3, 3)
    for layer in range(1, 8):
        assert cov.per_layer[layer - 1] == len(sc.chunk_coverage(sc.layer_chunk(layer, 3, 7), 3))
    with pytest.raises(ValueError):
        coverage_oracle(65, 4)


def test_variance_oracle_k1_equals_core_estimate():
    model = sc.make_convex_quadratic(seed=0)
    x = model.optimum() + 0.3
    cfg = sc.SpbConfig(k=1, B=16)
    orc = variance_oracle(model, cfg, x=x, trials=500, seed=3)
    est = sc.empirical_variance(model, cfg, 500, seed=3, x=x)
    assert orc.spb_mean == pytest.approx(est.spb_mean, rel=1e-10)
    assert orc.baseline_mean == pytest.approx(est.baseline_mean, rel=1e-10)
    assert orc.spb_mean == pytest.approx(orc.baseline_mean, rel=1e-12)


def test_variance_oracle_matches_core_k4():
    model = sc.make_convex_quadratic(seed=0)
    x = model.optimum() + 0.3
    cfg = sc.SpbConfig(k=4, B=64)
    orc = variance_oracle(model, cfg, x=x, trials=10_000, seed=0)
    est = sc.empirical_variance(model, cfg, 10_000, seed=0, x=x)
    se = np.hypot(est.spb_se, orc.harmonic_se)
    assert abs(orc.harmonic - est.spb_mean) <= 3 * se


def test_baseline_follows_one_over_b():
    model = sc.make_convex_quadratic(seed=0)
    x = model.optimum() + 0.3
    a = variance_oracle(model, sc.SpbConfig(k=2, B=16), x=x, trials=6000, seed=1)
    b = variance_oracle(model, sc.SpbConfig(k=2, B=32), x=x, trials=6000, seed=2)
    ratio = a.baseline_mean / b.baseline_mean
    # delta-method SE of the ratio
    se = ratio * np.hypot(a.baseline_se / a.baseline_mean, b.baseline_se / b.baseline_mean)
    assert abs(ratio - 2.0) <= 3 * se
