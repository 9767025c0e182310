"""Classical scheduling policies behind the ``decide(view, rng)`` contract."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .simcore import Mode
from .validation import check_weights


@dataclass(frozen=True)
class KnapsackItem:
    job_id: int
    weight: int
    value: float

    def __post_init__(self):
        if self.weight < 1:
            raise ValueError("knapsack item weight must be >= 1")
        if self.value < 0:
            raise ValueError("knapsack item value must be non-negative")


def fcfs_easy_decide(view, rng=None):
    """FCFS order with EASY backfilling."""
    actions = []
    if view.reservation is None:
        while view.queue:
            head = view.queue[0]
            if not view.fits(head):
                actions.append(view.reserve(head))
                break
            actions.append(view.start(head, Mode.READY))
    if view.reservation is not None:
        actions.extend(_first_fit_backfill(view))
    return actions


def _first_fit_backfill(view):
    actions = []
    while True:
        cands = view.backfill_candidates()
        if not cands:
            return actions
        actions.append(view.start(cands[0], Mode.BACKFILLED))


def binpacking_decide(view, rng=None):
    """Start the largest job that fits (earliest submit on ties) until none does."""
    actions = []
    while True:
        runnable = view.runnable()
        if not runnable:
            return actions
        # queue is in arrival order, so max() keeps the earliest among equals
        best = max(runnable, key=lambda j: j.size)
        actions.append(view.start(best, Mode.READY))


def random_decide(view, rng):
    actions = []
    while True:
        runnable = view.runnable()
        if not runnable:
            return actions
        pick = runnable[int(rng.integers(len(runnable)))]
        actions.append(view.start(pick, Mode.READY))


def knapsack_dp(capacity, items):
    """Exact 0-1 knapsack by dynamic programming over capacity.

    Among optimal selections the lexicographically smallest sorted tuple of
    job ids is returned. Returns ``(chosen_ids, total_value)``.
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    items = sorted(items, key=lambda it: it.job_id)
    n = len(items)
    # best[i, c]: max value from items[i:] with capacity c
    best = np.zeros((n + 1, capacity + 1))
    for i in range(n - 1, -1, -1):
        w, v = items[i].weight, items[i].value
        row = best[i + 1].copy()
        if w <= capacity:
            row[w:] = np.maximum(row[w:], best[i + 1, :capacity + 1 - w] + v)
        best[i] = row
    chosen = []
    c = capacity
    for i, it in enumerate(items):
        target = best[i, c]
        if _close(target, 0.0):
            break
        if it.weight <= c and _close(it.value + best[i + 1, c - it.weight], target):
            chosen.append(it.job_id)
            c -= it.weight
    total = float(sum(it.value for it in items if it.job_id in set(chosen)))
    return tuple(chosen), total


def _close(a, b):
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def knapsack_values(view, objective="capability", weights=(1 / 3, 1 / 3, 1 / 3)):
    """Separable per-job surrogate of the scheduling objective.

    capability: w1 * wait / max_wait + (w2 + w3) * size / N.
    capacity:   1 / max(wait, 1 s).
    """
    now = view.now
    waits = [now - j.submit_time for j in view.queue]
    if objective == "capability":
        w1, w2, w3 = check_weights(weights)
        t_max = max(waits, default=0.0)
        n = view.total_nodes
        return [w1 * (w / t_max if t_max > 0 else 1.0) + (w2 + w3) * j.size / n
                for w, j in zip(waits, view.queue)]
    if objective in ("capacity", "capacity-linear"):
        return [1.0 / max(w, 1.0) for w in waits]
    raise ValueError(f"unknown objective {objective!r}")


def optimization_decide(view, rng=None, objective="capability", weights=(1 / 3, 1 / 3, 1 / 3)):
    values = knapsack_values(view, objective, weights)
    items = [KnapsackItem(j.id, j.size, v) for j, v in zip(view.queue, values)]
    chosen, _ = knapsack_dp(view.free_nodes, items)
    chosen = set(chosen)
    return [view.start(j, Mode.READY) for j in list(view.queue) if j.id in chosen]


class FCFSEasy(BaseEstimator):
    name = "fcfs"

    def decide(self, view, rng=None):
        return fcfs_easy_decide(view, rng)


class BinPacking(BaseEstimator):
    name = "binpacking"

    def decide(self, view, rng=None):
        return binpacking_decide(view, rng)


class RandomPolicy(BaseEstimator):
    name = "random"

    def decide(self, view, rng):
        return random_decide(view, rng)


class Optimization(BaseEstimator):
    """Knapsack selection of the jobs to start, maximizing a per-job surrogate."""

    name = "optimization"

    def __init__(self, objective="capability", weights=(1 / 3, 1 / 3, 1 / 3)):
        self.objective = objective
        self.weights = weights

    def decide(self, view, rng=None):
        return optimization_decide(view, rng, self.objective, self.weights)


BASELINES = {
    "fcfs": FCFSEasy,
    "binpacking": BinPacking,
    "random": RandomPolicy,
    "optimization": Optimization,
}
