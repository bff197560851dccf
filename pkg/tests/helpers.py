"""Small hand-built instances shared by several test modules."""
from spbsim.cost_model import TaskDemand
from spbsim.scheduler import JobDag


def chain_job(job_id="j", arrival_us=0, ms=10.0, iterations=2, mem=2.0, grad_mb=10.0,
              compute=1.0):
    """One-worker job with ``iterations`` tasks of ``ms`` each."""
    return JobDag(job_id, arrival_us, "synthetic", 1, iterations, False,
                  (TaskDemand(ms, mem, compute),), grad_mb)


def fig2_jobs(job2_arrival_us=100_000):
    """Two 3-worker SPB jobs with worker times 0.3/0.6/1.0 s, one iteration each."""
    demands = tuple(TaskDemand(ms, 4.0) for ms in (300.0, 600.0, 1000.0))
    return [JobDag("job1", 0, "fig2", 3, 1, True, demands, 170.0),
            JobDag("job2", job2_arrival_us, "fig2", 3, 1, True, demands, 170.0)]
