"""Job traces: SWF parsing and writing, filtering, splitting, statistics,
resampling and synthesis of jobsets."""

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyTraceError, ParseError
from .validation import check_increasing, check_jobset, check_positive_int

SWF_FIELDS = 18
SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400

# 1-based SWF columns
F_ID, F_SUBMIT, F_WAIT, F_RUNTIME, F_ALLOC = 1, 2, 3, 4, 5
F_REQ_PROCS, F_REQ_TIME, F_STATUS, F_QUEUE, F_PRECEDING = 8, 9, 11, 15, 17


@dataclass(frozen=True, slots=True)
class Job:
    id: int
    submit_time: float
    actual_runtime: float
    runtime_estimate: float
    size: int
    priority: int = 0
    dependencies: tuple = ()

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"job id must be non-negative, got {self.id}")
        if self.size < 1:
            raise ValueError(f"job {self.id}: size must be >= 1")
        if self.actual_runtime < 1 or self.runtime_estimate < 1:
            raise ValueError(f"job {self.id}: runtimes must be >= 1 s")
        if self.priority not in (0, 1):
            raise ValueError(f"job {self.id}: priority must be 0 or 1")

    @property
    def duration(self):
        """Simulated execution time; the estimate is a hard kill bound."""
        return min(self.actual_runtime, self.runtime_estimate)

    @property
    def sort_key(self):
        return (self.submit_time, self.id)


@dataclass(frozen=True)
class JobSet:
    jobs: tuple = ()
    source: str = "real"
    label: str = ""
    skipped: int = 0

    def __post_init__(self):
        if self.source not in ("real", "sampled", "synthetic"):
            raise ValueError(f"unknown jobset source {self.source!r}")
        jobs = tuple(sorted(self.jobs, key=lambda j: j.sort_key))
        object.__setattr__(self, "jobs", jobs)

    def __len__(self):
        return len(self.jobs)

    def __iter__(self):
        return iter(self.jobs)

    def __getitem__(self, i):
        return self.jobs[i]

    @property
    def max_size(self):
        return max((j.size for j in self.jobs), default=0)


@dataclass
class WorkloadStats:
    """Arrival, size, runtime and estimate-accuracy distributions of a trace.

    The empirical distributions are ``{value: fraction}`` dicts with sorted keys.
    """

    mean_interarrival: float
    weekly_arrival_histogram: np.ndarray
    hourly_arrival_histogram: np.ndarray
    size_histogram: dict = field(default_factory=dict)
    runtime_histogram: dict = field(default_factory=dict)
    estimate_ratio_histogram: dict = field(default_factory=dict)

    def to_csv(self):
        rows = ["histogram,bin,value", f"mean_interarrival,0,{_fmt(self.mean_interarrival)}"]
        for i, v in enumerate(self.weekly_arrival_histogram):
            rows.append(f"weekly,{i},{_fmt(v)}")
        for i, v in enumerate(self.hourly_arrival_histogram):
            rows.append(f"hourly,{i},{_fmt(v)}")
        for name, hist in (
            ("size", self.size_histogram),
            ("runtime", self.runtime_histogram),
            ("estimate_ratio", self.estimate_ratio_histogram),
        ):
            for k, v in hist.items():
                rows.append(f"{name},{_fmt(k)},{_fmt(v)}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text):
        weekly = np.zeros(7)
        hourly = np.zeros(24)
        hists = {"size": {}, "runtime": {}, "estimate_ratio": {}}
        mean_ia = 0.0
        lines = text.strip().splitlines()
        for line in lines[1:]:
            name, b, v = line.split(",")
            if name == "mean_interarrival":
                mean_ia = float(v)
            elif name == "weekly":
                weekly[int(b)] = float(v)
            elif name == "hourly":
                hourly[int(b)] = float(v)
            else:
                hists[name][_num(b)] = float(v)
        return cls(mean_ia, weekly, hourly, hists["size"], hists["runtime"],
                   hists["estimate_ratio"])


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def _num(token):
    try:
        return int(token)
    except ValueError:
        return float(token)


def parse_swf(stream, high_priority_queue=None, priority_field=F_QUEUE):
    """Read an SWF trace into a JobSet.

    ``stream`` is a text stream, a path-like, or a string holding the trace
    itself (detected by the presence of a newline). Lines with a non-positive
    size or runtime are dropped; the count is kept in ``JobSet.skipped``.
    Field ``priority_field`` (1-based) equal to ``high_priority_queue`` marks a
    job as high priority. A positive preceding-job field becomes a dependency
    when that job was submitted strictly earlier in the same trace.
    """
    if isinstance(stream, str) and "\n" in stream:
        stream = io.StringIO(stream)
    if not hasattr(stream, "read"):
        with open(stream) as fh:
            return parse_swf(fh, high_priority_queue, priority_field)

    jobs = []
    skipped = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        tokens = line.split()
        if len(tokens) < SWF_FIELDS:
            raise ParseError(f"expected {SWF_FIELDS} fields, found {len(tokens)}", lineno)
        try:
            values = [_num(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise ParseError(f"malformed numeric field {bad!r}", lineno) from None

        def col(k):
            return values[k - 1]

        runtime = col(F_RUNTIME)
        size = col(F_REQ_PROCS) if col(F_REQ_PROCS) > 0 else col(F_ALLOC)
        if size <= 0 or runtime <= 0:
            skipped += 1
            continue
        estimate = col(F_REQ_TIME) if col(F_REQ_TIME) > 0 else runtime
        # sub-second values are raised to the 1 s floor
        runtime = max(runtime, 1)
        estimate = max(estimate, 1)
        priority = int(high_priority_queue is not None and col(priority_field) == high_priority_queue)
        preceding = col(F_PRECEDING)
        deps = (int(preceding),) if preceding > 0 else ()
        try:
            jobs.append(Job(int(col(F_ID)), col(F_SUBMIT), runtime, estimate, int(size),
                            priority, deps))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None

    if not jobs:
        raise EmptyTraceError("trace contains no valid jobs")
    return JobSet(tuple(_clean_dependencies(jobs)), "real", skipped=skipped)


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def _clean_dependencies(jobs):
    """Drop dependency ids that are absent or not strictly earlier."""
    submit = {j.id: j.submit_time for j in jobs}
    out = []
    for j in jobs:
        if j.dependencies:
            deps = tuple(d for d in j.dependencies
                         if d in submit and submit[d] < j.submit_time)
            if deps != j.dependencies:
                j = replace(j, dependencies=deps)
        out.append(j)
    return out


def write_swf(jobset, stream=None, high_priority_queue=1):
    """Emit a JobSet as SWF. Returns the text when ``stream`` is None.

    Unknown columns are written as -1; high-priority jobs get
    ``high_priority_queue`` in the queue column.
    """
    lines = [f"; Jobs: {len(jobset)}", f"; Source: {jobset.source}"]
    if jobset.label:
        lines.append(f"; Label: {jobset.label}")
    for j in jobset:
        row = [-1] * SWF_FIELDS
        row[F_ID - 1] = j.id
        row[F_SUBMIT - 1] = j.submit_time
        row[F_RUNTIME - 1] = j.actual_runtime
        row[F_ALLOC - 1] = j.size
        row[F_REQ_PROCS - 1] = j.size
        row[F_REQ_TIME - 1] = j.runtime_estimate
        row[F_STATUS - 1] = 1
        row[F_QUEUE - 1] = high_priority_queue if j.priority else -1
        if j.dependencies:
            row[F_PRECEDING - 1] = j.dependencies[0]
        lines.append(" ".join(_fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if stream is None:
        return text
    stream.write(text)
    return None


def filter_jobs(jobset, min_size=0, hide_dependent=True):
    """Keep jobs with ``size >= min_size``.

    With ``hide_dependent`` the dependency annotations survive, so the
    simulator holds such jobs back until their parents finish; otherwise all
    jobs are made independent. Dependencies on removed jobs are dropped.
    """
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    kept = [j for j in jobset if j.size >= min_size]
    if hide_dependent:
        ids = {j.id for j in kept}
        kept = [j if all(d in ids for d in j.dependencies)
                else replace(j, dependencies=tuple(d for d in j.dependencies if d in ids))
                for j in kept]
    else:
        kept = [replace(j, dependencies=()) if j.dependencies else j for j in kept]
    return JobSet(tuple(kept), jobset.source, jobset.label)


def split_jobset(jobset, boundaries):
    """Partition by submit time at ``boundaries``: k boundaries give k + 1 parts.

    Parts are the half-open intervals (-inf, b1), [b1, b2), ..., [bk, inf).
    Each part is re-based so its first job is submitted at 0.
    """
    bounds = check_increasing(boundaries, "boundaries")
    parts = [[] for _ in range(len(bounds) + 1)]
    for j in jobset:
        parts[int(np.searchsorted(bounds, j.submit_time, side="right"))].append(j)
    out = []
    for i, jobs in enumerate(parts):
        label = f"{jobset.label}[{i}]" if jobset.label else f"part{i}"
        out.append(JobSet(tuple(_rebase(jobs)), jobset.source, label))
    return out


def _rebase(jobs):
    if not jobs:
        return []
    t0 = min(j.submit_time for j in jobs)
    ids = {j.id for j in jobs}
    return [replace(j, submit_time=j.submit_time - t0,
                    dependencies=tuple(d for d in j.dependencies if d in ids))
            for j in jobs]


def _empirical(values):
    uniq, counts = np.unique(np.asarray(values), return_counts=True)
    probs = counts / counts.sum()
    return {_py(k): float(p) for k, p in zip(uniq, probs)}


def _py(x):
    x = x.item() if hasattr(x, "item") else x
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


def compute_stats(jobset):
    check_jobset(jobset)
    submits = np.array([j.submit_time for j in jobset], dtype=float)
    n = len(submits)
    mean_ia = float((submits[-1] - submits[0]) / (n - 1)) if n > 1 else 0.0
    days = (submits // SECONDS_PER_DAY).astype(np.int64) % 7
    hours = ((submits % SECONDS_PER_DAY) // SECONDS_PER_HOUR).astype(np.int64)
    weekly = np.bincount(days, minlength=7) / n
    hourly = np.bincount(hours, minlength=24) / n
    ratios = [min(1.0, j.actual_runtime / j.runtime_estimate) for j in jobset]
    return WorkloadStats(
        mean_interarrival=mean_ia,
        weekly_arrival_histogram=weekly,
        hourly_arrival_histogram=hourly,
        size_histogram=_empirical([j.size for j in jobset]),
        runtime_histogram=_empirical([j.actual_runtime for j in jobset]),
        estimate_ratio_histogram=_empirical(ratios),
    )


def sample_jobset(source, count, seed, label="sampled"):
    """Resample jobs uniformly with replacement and give them Poisson arrivals
    at the source's mean rate."""
    check_jobset(source)
    check_positive_int(count, "count")
    rng = np.random.default_rng(seed)
    mean_ia = compute_stats(source).mean_interarrival
    picks = rng.integers(0, len(source), size=count)
    gaps = rng.exponential(mean_ia, size=count - 1) if mean_ia > 0 else np.zeros(count - 1)
    submits = np.rint(np.concatenate([[0.0], np.cumsum(gaps)])).astype(np.int64)
    jobs = []
    for new_id, (k, t) in enumerate(zip(picks, submits), start=1):
        j = source[int(k)]
        jobs.append(Job(new_id, int(t), j.actual_runtime, j.runtime_estimate, j.size,
                        j.priority))
    return JobSet(tuple(jobs), "sampled", label)


def _draw(rng, hist, count):
    keys = list(hist)
    probs = np.array([hist[k] for k in keys], dtype=float)
    idx = rng.choice(len(keys), size=count, p=probs / probs.sum())
    return [keys[i] for i in idx]


def synthesize_arrivals(stats, count, rng):
    """Non-homogeneous Poisson arrivals by thinning.

    The rate in each (weekday, hour) cell is proportional to
    ``weekly[d] * hourly[h]`` and scaled so the long-run mean gap equals
    ``stats.mean_interarrival``.
    """
    if stats.mean_interarrival <= 0:
        return np.zeros(count, dtype=np.int64)
    weekly = np.asarray(stats.weekly_arrival_histogram, dtype=float)
    hourly = np.asarray(stats.hourly_arrival_histogram, dtype=float)
    cell = np.outer(weekly / weekly.sum(), hourly / hourly.sum()).ravel()  # 168 cells
    rate = cell * 168.0 / stats.mean_interarrival
    rate_max = rate.max()
    out = np.empty(count)
    t = 0.0
    n = 0
    batch = max(64, 2 * count)
    while n < count:
        gaps = rng.exponential(1.0 / rate_max, size=batch)
        u = rng.random(batch)
        cand = t + np.cumsum(gaps)
        slot = ((cand // SECONDS_PER_HOUR).astype(np.int64)) % 168
        accepted = cand[u * rate_max < rate[slot]]
        take = min(count - n, len(accepted))
        out[n:n + take] = accepted[:take]
        n += take
        t = cand[-1]
    return np.floor(out).astype(np.int64)


def synthesize_jobset(stats, count, seed, label="synthetic"):
    check_positive_int(count, "count")
    rng = np.random.default_rng(seed)
    submits = synthesize_arrivals(stats, count, rng)
    sizes = _draw(rng, stats.size_histogram, count)
    runtimes = _draw(rng, stats.runtime_histogram, count)
    ratios = _draw(rng, stats.estimate_ratio_histogram, count)
    jobs = []
    for i in range(count):
        rt = runtimes[i]
        est = max(math.ceil(rt / ratios[i]), math.ceil(rt))
        jobs.append(Job(i + 1, int(submits[i]), rt, est, int(sizes[i])))
    return JobSet(tuple(jobs), "synthetic", label)


def total_variation(p, q):
    """Total-variation distance between two histograms (arrays or dicts)."""
    if isinstance(p, dict) or isinstance(q, dict):
        keys = set(p) | set(q)
        return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


class WorkloadModel(BaseEstimator):
    """Fit workload statistics on a trace and draw look-alike jobsets.

    Parameters
    ----------
    min_size : int
        Jobs smaller than this are filtered out before fitting.
    """

    def __init__(self, min_size=0):
        self.min_size = min_size

    def fit(self, jobset, y=None):
        check_jobset(jobset)
        self.jobset_ = filter_jobs(jobset, self.min_size)
        check_jobset(self.jobset_)
        self.stats_ = compute_stats(self.jobset_)
        return self

    def sample(self, count, seed, kind="synthetic"):
        check_is_fitted(self, "stats_")
        if kind == "synthetic":
            return synthesize_jobset(self.stats_, count, seed)
        if kind == "sampled":
            return sample_jobset(self.jobset_, count, seed)
        raise ValueError(f"unknown sample kind {kind!r}")
