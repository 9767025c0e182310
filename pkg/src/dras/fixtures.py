"""Small deterministic workloads for tests, demos and the desk profile.

``python -m dras.fixtures`` regenerates the bundled SWF files under
``dras/data``.
"""

import os
import sys
from importlib import resources

import numpy as np

from .workload import Job, JobSet, parse_swf, write_swf

DESK_NODES = 64
DESK_MAX_RUNTIME = 43200
BUNDLED = {
    "desk_train.swf": lambda: desk_trace(600, seed=11, label="desk training trace"),
    "desk_validation.swf": lambda: desk_trace(200, seed=23, label="desk validation trace"),
    "desk_starvation.swf": lambda: starvation_trace(seed=5),
    "golden.swf": lambda: golden_jobset(),
}


def golden_jobset():
    """Four jobs on 4 nodes with a hand-checkable FCFS-EASY schedule.

    A(2 nodes, 100 s), B(4, 100), C(1, 50), D(1, 200), all submitted at 0
    with exact estimates: A starts at once, B is reserved for t=100, C is
    backfilled at 0 and D (ending after 100) runs once B is done.
    """
    rows = [(1, 2, 100), (2, 4, 100), (3, 1, 50), (4, 1, 200)]
    return JobSet(tuple(Job(i, 0.0, float(r), float(r), n) for i, n, r in rows),
                  source="synthetic", label="golden")


def _estimate(rng, runtime):
    over = rng.choice([1.0, 1.5, 2.0, 4.0], p=[0.2, 0.3, 0.3, 0.2])
    return float(min(DESK_MAX_RUNTIME, np.ceil(runtime * over)))


def desk_trace(n_jobs, seed, load=0.9, label="desk"):
    """Mixed-size trace for a 64-node system at roughly ``load`` offered load."""
    rng = np.random.default_rng(seed)
    band = rng.choice(3, size=n_jobs, p=[0.6, 0.3, 0.1])
    lo = np.array([1, 9, 33])[band]
    hi = np.array([8, 32, 64])[band]
    sizes = rng.integers(lo, hi + 1)
    runtimes = np.clip(np.rint(rng.lognormal(np.log(1500), 1.0, n_jobs)), 30, DESK_MAX_RUNTIME)
    mean_gap = sizes.mean() * runtimes.mean() / (DESK_NODES * load)
    submits = np.concatenate([[0.0], np.cumsum(np.rint(rng.exponential(mean_gap, n_jobs - 1)))])
    jobs = tuple(Job(i + 1, float(submits[i]), float(runtimes[i]),
                     _estimate(rng, runtimes[i]), int(sizes[i])) for i in range(n_jobs))
    return JobSet(jobs, source="real", label=label)


def starvation_trace(seed, cycles=2, period=3 * 3600, high=1.4, low=0.4, large_per_cycle=2):
    """Alternating overload/lull phases of 1-8 node jobs plus a few 48-64
    node jobs submitted early in each overload phase.

    While small jobs pile up, a 48+ node job only starts promptly if the
    policy holds nodes back for it.
    """
    rng = np.random.default_rng(seed)
    mean_work = 4.5 * 1000  # mean size times mean runtime of the small jobs
    rows = []
    t = 0.0
    for c in range(cycles):
        for load in (high, low):
            end = t + period
            while True:
                size = int(rng.integers(1, 9))
                runtime = float(np.clip(np.rint(rng.lognormal(np.log(900), 0.5)), 60, 3600))
                t += float(np.rint(rng.exponential(mean_work / (DESK_NODES * load))))
                if t >= end:
                    break
                rows.append((t, runtime, size))
            t = end
        for _ in range(large_per_cycle):
            rows.append((2 * c * period + float(rng.integers(600, 2400)),
                         float(rng.integers(1800, 3601)), int(rng.integers(48, 65))))
    rows.sort(key=lambda row: row[0])
    t0 = rows[0][0]
    jobs = tuple(Job(i + 1, s - t0, r, _estimate(rng, r), n) for i, (s, r, n) in enumerate(rows))
    return JobSet(jobs, source="synthetic", label="starvation workload")


def load_bundled(name):
    """Parse one of the SWF files shipped in ``dras/data``."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled trace {name!r}; choose from {sorted(BUNDLED)}")
    text = resources.files("dras").joinpath("data").joinpath(name).read_text()
    return parse_swf(text)


def bundled_path(name):
    return str(resources.files("dras").joinpath("data").joinpath(name))


def main(out_dir=None):
    out_dir = out_dir or os.path.join(os.path.dirname(__file__), "data")
    os.makedirs(out_dir, exist_ok=True)
    for name, build in BUNDLED.items():
        with open(os.path.join(out_dir, name), "w") as fh:
            write_swf(build(), fh)
        print(os.path.join(out_dir, name))


if __name__ == "__main__":
    main(*sys.argv[1:])
