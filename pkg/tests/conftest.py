import numpy as np
import pytest

from dras.fixtures import golden_jobset
from dras.workload import Job, JobSet


def random_jobset(seed, n_jobs=60, n_nodes=64, load=1.1, max_runtime=7200):
    """Small jobset with a mix of sizes, sloppy estimates and bursty arrivals."""
    rng = np.random.default_rng(seed)
    sizes = np.where(rng.random(n_jobs) < 0.2, rng.integers(n_nodes // 2, n_nodes + 1, n_jobs),
                     rng.integers(1, n_nodes // 4 + 1, n_jobs))
    runtimes = rng.integers(10, max_runtime, n_jobs)
    estimates = np.maximum(1, (runtimes * rng.choice([0.8, 1.0, 1.5, 3.0], n_jobs)).astype(int))
    gap = sizes.mean() * runtimes.mean() / (n_nodes * load)
    submits = np.cumsum(rng.choice([0, 1], n_jobs, p=[0.2, 0.8]) * rng.exponential(gap, n_jobs))
    submits = np.rint(submits - submits[0])
    jobs = tuple(Job(i + 1, float(submits[i]), float(runtimes[i]), float(estimates[i]),
                     int(sizes[i])) for i in range(n_jobs))
    return JobSet(jobs, source="synthetic")


def check_result(jobset, result, n_nodes):
    """Job conservation, capacity and utilization bounds on a finished run."""
    ids = [r.job_id for r in result.jobs]
    assert sorted(ids) == sorted(j.id for j in jobset)
    by_id = {j.id: j for j in jobset}
    edges = []
    for r in result.jobs:
        job = by_id[r.job_id]
        assert r.start >= job.submit_time
        assert r.end - r.start == pytest.approx(job.duration)
        edges += [(r.start, 1, r.size), (r.end, 0, -r.size)]
    used = 0
    for _, _, delta in sorted(edges):
        used += delta
        assert 0 <= used <= n_nodes
    if result.utilization_defined:
        from dras.metrics import compute_metrics

        util = compute_metrics(result, n_nodes).utilization
        assert 0.0 <= util <= 1.0 + 1e-12


@pytest.fixture
def golden():
    return golden_jobset()


ACCEPTANCE = []  # (criterion, passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
