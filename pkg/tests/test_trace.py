import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spbsim import trace
from spbsim.cost_model import load_profiles
from spbsim.errors import ConfigurationError, TraceFormatError, UnknownModelError

HEADER = "job_id,arrival_s,model_name,num_workers,iterations,spb\n"


def test_empty_file(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("")
    assert trace.load(p) == []
    p.write_text(HEADER)
    assert trace.load(p) == []


def test_row_fractions(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "j1,0,ResNet18,4,100,true\n")
    (job,) = trace.load(p)
    assert job.fractions == (0.25, 0.5, 0.75, 1.0)
    assert (job.job_id, job.k, job.total_iterations, job.spb_enabled) == ("j1", 4, 100, True)


def test_spb_false_full_fractions(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "j1,0,ResNet18,2,5,false\n")
    (job,) = trace.load(p)
    assert job.fractions == (1.0, 1.0)
    assert job.demands[0] == job.demands[1]


@given(st.integers(0, 10_000), st.integers(0, 40))
def test_round_trip(seed, n):
    recs = trace.generate(seed=seed, n_jobs=n, mean_interarrival_s=3.7)
    text = trace.to_csv_text(recs)
    assert trace.parse(text) == recs


def test_round_trip_through_file(tmp_path):
    recs = trace.generate(seed=1, n_jobs=50)
    p = tmp_path / "t.csv"
    trace.save(recs, p)
    assert trace.load(p) == trace.to_jobs(recs)


def test_same_seed_identical():
    assert trace.to_csv_text(trace.generate(5, 100)) == trace.to_csv_text(trace.generate(5, 100))
    assert trace.generate(5, 100) != trace.generate(6, 100)


def test_defaults():
    recs = trace.generate(seed=0)
    assert len(recs) == 500
    assert recs[0].arrival_us == 0
    assert trace.DEFAULT_MIX == (0.50, 0.10, 0.20, 0.15, 0.05)
    assert {r.num_workers for r in recs} <= set(trace.WORKER_SIZES)
    assert all(50 <= r.iterations <= 500 for r in recs)
    assert set(r.model_name for r in recs) <= set(load_profiles().names())


def test_mix_fidelity_large_n():
    recs = trace.generate(seed=11, n_jobs=100_000)
    w = np.array([r.num_workers for r in recs])
    for size, p in zip(trace.WORKER_SIZES, trace.DEFAULT_MIX):
        assert abs((w == size).mean() - p) <= 0.01


def test_mean_interarrival():
    recs = trace.generate(seed=12, n_jobs=10_000, mean_interarrival_s=30)
    a = np.array([r.arrival_us for r in recs])
    assert abs(np.diff(a).mean() / 1e6 - 30) <= 1.5


def test_streams_independent():
    a = trace.generate(seed=3, n_jobs=50, iters_range=(50, 500))
    b = trace.generate(seed=3, n_jobs=50, iters_range=(4000, 9000))
    assert [(r.arrival_us, r.model_name, r.num_workers) for r in a] == \
        [(r.arrival_us, r.model_name, r.num_workers) for r in b]


@pytest.mark.parametrize("kw", [dict(worker_mix=(0.5, 0.5)), dict(worker_mix=(0.5, 0.1, 0.1, 0.1, 0.1)),
                                dict(worker_mix=(1.2, -0.2, 0, 0, 0)), dict(n_jobs=-1),
                                dict(mean_interarrival_s=0), dict(iters_range=(10, 5))])
def test_generate_rejects(kw):
    with pytest.raises(ConfigurationError):
        trace.generate(seed=0, **kw)


@pytest.mark.parametrize("body,line,msg", [
    ("j1,0,ResNet18,3,10,true\n", 2, "num_workers"),
    ("j1,0,ResNet18,4,0,true\n", 2, "iterations"),
    ("j1,0,ResNet18,4,10,maybe\n", 2, "spb"),
    ("j1,0,ResNet18,4,10\n", 2, "fields"),
    ("j1,5,ResNet18,4,10,true\nj2,4,ResNet18,4,10,true\n", 3, "decreases"),
    ("j1,0,ResNet18,4,10,true\nj1,1,ResNet18,4,10,true\n", 3, "duplicate"),
    ("j1,abc,ResNet18,4,10,true\n", 2, "arrival"),
    ("j1,-1,ResNet18,4,10,true\n", 2, "arrival"),
])
def test_malformed_rows_name_line(tmp_path, body, line, msg):
    p = tmp_path / "bad.csv"
    p.write_text(HEADER + body)
    with pytest.raises(TraceFormatError, match=rf"bad\.csv:{line}: .*{msg}"):
        trace.load(p)


def test_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,when\n")
    with pytest.raises(TraceFormatError, match=":1:"):
        trace.load(p)


def test_unknown_model_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(HEADER + "j1,0,ResNet18,1,10,true\nj2,1,AlexNet,1,10,true\n")
    with pytest.raises(UnknownModelError, match=":3:"):
        trace.load(p)


def test_exact_decimal_arrivals():
    recs = trace.parse(HEADER + "a,0.1,VGG11,1,1,true\nb,12.000001,VGG11,1,1,true\n")
    assert [r.arrival_us for r in recs] == [100_000, 12_000_001]
