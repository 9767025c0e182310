import itertools

import numpy as np
import pytest

from dras.policies import (
    BinPacking,
    FCFSEasy,
    KnapsackItem,
    Optimization,
    RandomPolicy,
    binpacking_decide,
    fcfs_easy_decide,
    knapsack_dp,
    knapsack_values,
    random_decide,
)
from dras.simcore import ClusterState, Mode, SchedulingView
from dras.workload import Job


def view_with(free, sizes, total=None, now=0.0, submits=None):
    total = total or max(free, 1)
    cluster = ClusterState(total)
    if total > free:
        cluster.allocate(Job(999, 0, 1000, 1000, total - free), now)
    submits = submits or list(range(len(sizes)))
    queue = [Job(i + 1, float(s), 100, 100, n) for i, (s, n) in enumerate(zip(submits, sizes))]
    return SchedulingView(now, queue, cluster)


def brute_force(capacity, items):
    best = 0.0
    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            if sum(it.weight for it in combo) <= capacity:
                best = max(best, sum(it.value for it in combo))
    return best


def test_knapsack_examples():
    assert knapsack_dp(0, [KnapsackItem(1, 2, 3.0)]) == ((), 0.0)
    items = [KnapsackItem(1, 2, 3), KnapsackItem(2, 3, 4), KnapsackItem(3, 4, 5)]
    assert knapsack_dp(5, items) == ((1, 2), 7.0)
    assert knapsack_dp(10, []) == ((), 0.0)


def test_knapsack_tie_break_smallest_ids():
    items = [KnapsackItem(1, 1, 1.0), KnapsackItem(2, 1, 1.0), KnapsackItem(3, 2, 2.0)]
    assert knapsack_dp(2, items) == ((1, 2), 2.0)
    items = [KnapsackItem(5, 2, 2.0), KnapsackItem(2, 2, 2.0)]
    assert knapsack_dp(2, items)[0] == (2,)


def test_knapsack_item_validation():
    with pytest.raises(ValueError):
        KnapsackItem(1, 0, 1.0)
    with pytest.raises(ValueError):
        KnapsackItem(1, 1, -1.0)
    with pytest.raises(ValueError):
        knapsack_dp(-1, [])


def test_knapsack_matches_enumeration_small():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(0, 9))
        items = [KnapsackItem(i, int(rng.integers(1, 10)), float(rng.random() * 10))
                 for i in range(n)]
        cap = int(rng.integers(0, 20))
        chosen, total = knapsack_dp(cap, items)
        assert total == pytest.approx(brute_force(cap, items), abs=1e-9)
        assert sum(it.weight for it in items if it.job_id in chosen) <= cap


def test_fcfs_all_fit_and_empty():
    view = view_with(10, [2, 3, 4], total=10)
    acts = fcfs_easy_decide(view)
    assert [(a.job_id, a.mode) for a in acts] == [(1, Mode.READY), (2, Mode.READY),
                                                  (3, Mode.READY)]
    assert fcfs_easy_decide(view_with(4, [], total=4)) == []


def test_fcfs_reserves_once_then_backfills():
    view = view_with(2, [3, 1, 1, 2], total=4)
    acts = fcfs_easy_decide(view)
    assert acts[0].mode is Mode.RESERVED and acts[0].start_time == 1000
    assert sum(a.mode is Mode.RESERVED for a in acts) == 1
    assert [(a.job_id, a.mode) for a in acts[1:]] == [(2, Mode.BACKFILLED), (3, Mode.BACKFILLED)]


def test_binpacking_examples():
    acts = binpacking_decide(view_with(4, [3, 2, 2], total=8))
    assert [a.job_id for a in acts] == [1]
    acts = binpacking_decide(view_with(4, [2, 2, 2], total=8))
    assert [a.job_id for a in acts] == [1, 2]
    assert binpacking_decide(view_with(4, [5, 6], total=8)) == []
    assert all(a.mode is Mode.READY for a in binpacking_decide(view_with(8, [1, 2, 3, 4])))


def test_random_one_runnable_and_frequencies():
    rng = np.random.default_rng(0)
    acts = random_decide(view_with(2, [2, 5], total=8), rng)
    assert [a.job_id for a in acts] == [1]
    first = [random_decide(view_with(2, [2, 2], total=4), rng)[0].job_id for _ in range(10_000)]
    assert np.mean(np.array(first) == 1) == pytest.approx(0.5, abs=0.02)


def test_random_is_seeded():
    def picks(seed):
        rng = np.random.default_rng(seed)
        return [a.job_id for a in random_decide(view_with(10, [1, 2, 3, 1, 2], total=10), rng)]

    assert picks(4) == picks(4)


def test_knapsack_values_surrogates():
    view = view_with(4, [2, 4], total=8, now=100.0, submits=[0, 50])
    w = (0.5, 0.25, 0.25)
    vals = knapsack_values(view, "capability", w)
    assert vals == pytest.approx([0.5 * 1.0 + 0.5 * 2 / 8, 0.5 * 0.5 + 0.5 * 4 / 8])
    assert knapsack_values(view, "capacity") == pytest.approx([1 / 100, 1 / 50])
    single = view_with(4, [2], total=8, now=0.0)
    assert knapsack_values(single, "capability", w) == pytest.approx([0.5 + 0.5 * 2 / 8])
    with pytest.raises(ValueError):
        knapsack_values(view, "bogus")


def test_optimization_matches_enumeration_on_golden(golden):
    view = SchedulingView(0.0, list(golden), ClusterState(4))
    vals = knapsack_values(view, "capability")
    items = [KnapsackItem(j.id, j.size, v) for j, v in zip(golden, vals)]
    acts = Optimization().decide(view)
    assert all(a.mode is Mode.READY for a in acts)
    chosen = {a.job_id for a in acts}
    assert sum(v for j, v in zip(golden, vals) if j.id in chosen) == pytest.approx(
        brute_force(4, items))
    assert Optimization().decide(view_with(8, [], total=8)) == []
    all_fit = Optimization().decide(view_with(10, [1, 2, 3], total=10))
    assert len(all_fit) == 3


def test_policy_estimators():
    assert Optimization(objective="capacity").get_params()["objective"] == "capacity"
    for cls in (FCFSEasy, BinPacking, RandomPolicy):
        assert cls().get_params() == {}
