"""User- and system-level scheduling metrics, execution-mode accounting and
Kiviat normalization."""

import io
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, EmptyTraceError
from .simcore import Mode
from .validation import check_increasing

SLOWDOWN_BOUND = 10.0
MODES = (Mode.READY, Mode.RESERVED, Mode.BACKFILLED)
KIVIAT_AXES = ("inv_avg_wait", "inv_max_wait", "inv_avg_slowdown", "inv_avg_response",
               "utilization")


@dataclass
class MetricsSummary:
    avg_wait: float
    max_wait: float
    avg_response: float
    avg_slowdown: float  # bounded at 10 s and floored at 1
    avg_slowdown_unbounded: float
    utilization: float
    mode_shares: dict  # mode -> (job fraction, node-second fraction)
    n_jobs: int = 0

    CSV_HEADER = ("policy,n_jobs,avg_wait,max_wait,avg_response,slowdown_bounded_10s,"
                  "slowdown_unbounded,utilization," + ",".join(
                      f"{m}_jobs,{m}_node_seconds" for m in MODES))

    def csv_row(self, policy):
        vals = [self.n_jobs, self.avg_wait, self.max_wait, self.avg_response, self.avg_slowdown,
                self.avg_slowdown_unbounded, self.utilization]
        for m in MODES:
            vals.extend(self.mode_shares[m])
        return ",".join([policy] + [_fmt(v) for v in vals])


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def compute_metrics(result, n_nodes=None):
    if not result.jobs:
        raise EmptyTraceError("simulation result has no jobs")
    n_nodes = n_nodes or result.n_nodes
    recs = result.jobs
    submit = np.array([r.submit for r in recs], dtype=float)
    start = np.array([r.start for r in recs], dtype=float)
    end = np.array([r.end for r in recs], dtype=float)
    size = np.array([r.size for r in recs], dtype=float)
    run = end - start
    wait = start - submit
    response = end - submit
    bounded = np.maximum(1.0, response / np.maximum(run, SLOWDOWN_BOUND))
    unbounded = response / run
    node_seconds = size * run
    elapsed = end.max() - submit.min()
    util = float(node_seconds.sum() / (n_nodes * elapsed)) if elapsed > 0 else math.nan
    modes = np.array([str(r.mode) for r in recs])
    shares = {}
    for m in MODES:
        sel = modes == str(m)
        shares[m] = (float(sel.mean()), float(node_seconds[sel].sum() / node_seconds.sum()))
    return MetricsSummary(
        avg_wait=float(wait.mean()),
        max_wait=float(wait.max()),
        avg_response=float(response.mean()),
        avg_slowdown=float(bounded.mean()),
        avg_slowdown_unbounded=float(unbounded.mean()),
        utilization=util,
        mode_shares=shares,
        n_jobs=len(recs),
    )


def size_bucket_labels(boundaries):
    b = [int(x) if float(x).is_integer() else x for x in boundaries]
    if not b:
        return ["all"]
    return [f"<{b[0]}"] + [f"{lo}-{hi}" for lo, hi in zip(b[:-1], b[1:])] + [f">={b[-1]}"]


def wait_distribution(result, size_buckets=()):
    """Group job waits by size bucket and execution mode.

    ``size_buckets`` are increasing boundaries; k boundaries give k + 1
    buckets ``[0, b1), [b1, b2), ..., [bk, inf)``. Returns a list of dicts
    with keys bucket, mode, count, min, median, max, waits. Empty groups are
    omitted.
    """
    bounds = check_increasing(size_buckets, "size_buckets")
    labels = size_bucket_labels(list(size_buckets))
    groups = {}
    for r in result.sorted_jobs():
        b = int(np.searchsorted(bounds, r.size, side="right"))
        groups.setdefault((b, str(r.mode)), []).append(r.start - r.submit)
    rows = []
    order = {str(m): i for i, m in enumerate(MODES)}
    for (b, mode) in sorted(groups, key=lambda k: (k[0], order[k[1]])):
        waits = groups[(b, mode)]
        rows.append({"bucket": labels[b], "bucket_index": b, "mode": mode, "count": len(waits),
                     "min": float(min(waits)), "median": float(np.median(waits)),
                     "max": float(max(waits)), "waits": waits})
    return rows


def max_wait_by_bucket(result, size_buckets=()):
    """``{bucket_index: max wait}`` over all modes."""
    out = {}
    for row in wait_distribution(result, size_buckets):
        out[row["bucket_index"]] = max(out.get(row["bucket_index"], 0.0), row["max"])
    return out


def _reciprocal(x):
    return math.inf if x == 0 else 1.0 / x


def _minmax(values):
    vals = np.array(values, dtype=float)
    inf = np.isinf(vals)
    if inf.all():
        return np.ones_like(vals)
    if inf.any():
        return inf.astype(float)
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        return np.ones_like(vals)
    return (vals - lo) / (hi - lo)


def kiviat_normalize(summaries):
    """Min-max normalize each "higher is better" axis across policies.

    Returns ``{policy: {axis: value}}`` with the best policy at 1 and the
    worst at 0 on every axis; an axis on which all policies tie is 1.
    """
    if len(summaries) < 2:
        raise ConfigurationError("kiviat normalization needs at least two policies")
    names = list(summaries)
    raw = {
        "inv_avg_wait": [_reciprocal(summaries[p].avg_wait) for p in names],
        "inv_max_wait": [_reciprocal(summaries[p].max_wait) for p in names],
        "inv_avg_slowdown": [_reciprocal(summaries[p].avg_slowdown) for p in names],
        "inv_avg_response": [_reciprocal(summaries[p].avg_response) for p in names],
        "utilization": [summaries[p].utilization for p in names],
    }
    norm = {axis: _minmax(vals) for axis, vals in raw.items()}
    return {p: {axis: float(norm[axis][i]) for axis in KIVIAT_AXES} for i, p in enumerate(names)}


def summary_csv(summaries):
    lines = [MetricsSummary.CSV_HEADER]
    lines += [s.csv_row(p) for p, s in summaries.items()]
    return "\n".join(lines) + "\n"


def kiviat_csv(table):
    lines = ["policy," + ",".join(KIVIAT_AXES)]
    for p, axes in table.items():
        lines.append(p + "," + ",".join(repr(axes[a]) for a in KIVIAT_AXES))
    return "\n".join(lines) + "\n"


def waits_csv(results):
    """Job-level CSV over ``{policy: SimulationResult}``."""
    buf = io.StringIO()
    buf.write("policy,job_id,size,mode,submit,start,wait\n")
    for p, res in results.items():
        for r in res.sorted_jobs():
            buf.write(f"{p},{r.job_id},{r.size},{r.mode},{_num(r.submit)},{_num(r.start)},"
                      f"{_num(r.start - r.submit)}\n")
    return buf.getvalue()


def mode_shares_csv(summaries):
    lines = ["policy,mode,job_fraction,node_seconds_fraction"]
    for p, s in summaries.items():
        for m in MODES:
            jf, nf = s.mode_shares[m]
            lines.append(f"{p},{m},{jf!r},{nf!r}")
    return "\n".join(lines) + "\n"


def _num(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)
