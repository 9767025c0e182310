import numpy as np
import pytest
from conftest import check_result, random_jobset

from dras.exceptions import ConfigurationError, ContractViolation, SimulationError
from dras.policies import BinPacking, FCFSEasy, RandomPolicy
from dras.simcore import (
    ClusterState,
    Mode,
    Reservation,
    ScheduleAction,
    SchedulingView,
    apply_action,
    backfill_candidates,
    earliest_reservation_time,
    run_simulation,
)
from dras.workload import Job, JobSet

GOLDEN_SCHEDULE = {  # job -> (start, mode), worked out by hand
    1: (0, Mode.READY),
    3: (0, Mode.BACKFILLED),
    2: (100, Mode.RESERVED),
    4: (200, Mode.RESERVED),
}


def test_golden_fcfs_schedule(golden):
    res = run_simulation(golden, FCFSEasy(), 4)
    got = {r.job_id: (r.start, r.mode) for r in res.jobs}
    assert got == GOLDEN_SCHEDULE
    assert [(r.job_id, r.end) for r in res.sorted_jobs()] == [(1, 100), (2, 200), (3, 50),
                                                             (4, 400)]
    # B reserved for 100 at t=0, re-confirmed at t=50; D reserved for 200 at t=100
    assert res.reservations == [(0, 2, 100), (50, 2, 100), (100, 4, 200)]
    check_result(golden, res, 4)


def test_golden_csv(golden):
    res = run_simulation(golden, FCFSEasy(), 4)
    assert res.jobs_csv().splitlines() == [
        "job_id,submit,start,end,size,mode",
        "1,0,0,100,2,ready",
        "2,0,100,200,4,reserved",
        "3,0,0,50,1,backfilled",
        "4,0,200,400,1,reserved",
    ]
    assert res.instances_csv().splitlines()[0] == "time,queue_len,free_nodes,n_actions,reward"


def busy_cluster(n, jobs, now=0.0):
    """Cluster with (size, estimate) jobs already running since ``now``."""
    c = ClusterState(n)
    for i, (size, est) in enumerate(jobs):
        c.allocate(Job(100 + i, 0, est, est, size), now)
    return c


def test_earliest_reservation_examples():
    c = busy_cluster(10, [(4, 50), (3, 20), (2, 80)])  # 1 node idle
    assert earliest_reservation_time(c, Job(1, 0, 1, 1, 1), 0)[0] == 0
    assert earliest_reservation_time(c, Job(1, 0, 1, 1, 4), 0)[0] == 20
    assert earliest_reservation_time(c, Job(1, 0, 1, 1, 8), 0)[0] == 50
    assert earliest_reservation_time(c, Job(1, 0, 1, 1, 10), 0)[0] == 80
    # the estimate-based view ignores the real (shorter) runtime
    c2 = ClusterState(4)
    c2.allocate(Job(9, 0, 10, 100, 4), 0)
    assert earliest_reservation_time(c2, Job(1, 0, 1, 1, 2), 0)[0] == 100


def test_earliest_start_claims_lowest_ids_first():
    c = busy_cluster(6, [(2, 30), (2, 10)])
    t, nodes = c.earliest_start(4, 0)
    assert t == 10 and list(nodes) == [2, 3, 4, 5]


def test_backfill_candidates_inclusive_boundary():
    c = busy_cluster(8, [(6, 100)])
    c.reservation = Reservation(1, 100, 8)
    queue = [Job(1, 0, 10, 10, 8), Job(2, 0, 100, 100, 2), Job(3, 0, 101, 101, 2),
             Job(4, 0, 5, 5, 3)]
    assert [j.id for j in backfill_candidates(c, queue, 0)] == [2]


def test_backfill_extra_nodes_rule():
    c = busy_cluster(10, [(6, 100)])
    c.reservation = Reservation(1, 100, 8)
    queue = [Job(1, 0, 10, 10, 8), Job(2, 0, 500, 500, 2), Job(3, 0, 500, 500, 3)]
    # at t=100 all 10 nodes are free, the reservation needs 8: two spare nodes
    assert [j.id for j in backfill_candidates(c, queue, 0)] == [2]
    with pytest.raises(ContractViolation):
        backfill_candidates(ClusterState(4), queue, 0)


def test_apply_action_rejects_contract_breaks():
    c = busy_cluster(4, [(3, 100)])
    q = [Job(1, 0, 10, 10, 4), Job(2, 0, 10, 10, 1), Job(3, 0, 500, 500, 1)]
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(1, Mode.READY, 0), 0)  # does not fit
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(2, Mode.RESERVED, 0), 0)  # fits now
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(1, Mode.RESERVED, 50), 0)  # wrong T
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(9, Mode.READY, 0), 0)  # unknown
    c.reservation = Reservation(1, 100, 4)
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(2, Mode.READY, 0), 0)
    with pytest.raises(ContractViolation):
        apply_action(list(q), c.copy(), ScheduleAction(3, Mode.BACKFILLED, 0), 0)
    queue = list(q)
    apply_action(queue, c, ScheduleAction(2, Mode.BACKFILLED, 0), 0)
    assert [j.id for j in queue] == [1, 3] and c.free_nodes == 0


def test_view_is_a_private_copy(golden):
    c = ClusterState(4)
    view = SchedulingView(0, list(golden), c)
    view.start(golden[0])
    assert c.free_nodes == 4 and view.free_nodes == 2
    jobs, nodes = view.arrays()
    assert jobs.shape == (3, 4) and nodes.shape == (4, 2)
    assert not jobs.flags.writeable and not nodes.flags.writeable
    assert list(nodes[:, 0]) == [0, 0, 1, 1] and list(nodes[:2, 1]) == [100, 100]


def test_kill_rule_and_estimate_only_view():
    js = JobSet((Job(1, 0, 500, 100, 4), Job(2, 10, 10, 10, 4)))
    res = run_simulation(js, FCFSEasy(), 4)
    ends = {r.job_id: (r.start, r.end) for r in res.jobs}
    assert ends == {1: (0, 100), 2: (100, 110)}


def test_early_finish_starts_reserved_job_sooner():
    js = JobSet((Job(1, 0, 10, 100, 4), Job(2, 1, 10, 10, 4)))
    res = run_simulation(js, FCFSEasy(), 4)
    assert {r.job_id: r.start for r in res.jobs} == {1: 0, 2: 10}
    assert res.reservations == [(1, 2, 100)]


def test_completion_processed_before_arrival_at_same_time():
    js = JobSet((Job(1, 0, 50, 50, 4), Job(2, 50, 10, 10, 4)))
    res = run_simulation(js, FCFSEasy(), 4)
    rec = {r.job_id: r for r in res.jobs}
    assert rec[2].start == 50 and rec[2].mode is Mode.READY
    assert [i.time for i in res.instances] == [0, 50, 60]


def test_dependent_job_hidden_until_parent_done():
    js = JobSet((Job(1, 0, 100, 100, 1), Job(2, 5, 10, 10, 1, dependencies=(1,))))
    res = run_simulation(js, FCFSEasy(), 4)
    assert {r.job_id: r.start for r in res.jobs} == {1: 0, 2: 100}


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        run_simulation(JobSet((Job(1, 0, 1, 1, 8),)), FCFSEasy(), 4)
    with pytest.raises(ConfigurationError):
        run_simulation(JobSet(()), FCFSEasy(), 4, seed=None)
    assert run_simulation(JobSet(()), FCFSEasy(), 4).jobs == []


def test_lazy_policy_raises():
    js = JobSet((Job(1, 0, 1, 1, 1),))
    with pytest.raises(SimulationError, match="unscheduled"):
        run_simulation(js, lambda view, rng: [], 4)


def test_policy_actions_are_validated():
    js = JobSet((Job(1, 0, 10, 10, 4), Job(2, 0, 10, 10, 4)))

    def greedy(view, rng):
        return [ScheduleAction(j.id, Mode.READY, view.now) for j in view.queue]

    with pytest.raises(ContractViolation):
        run_simulation(js, greedy, 4)


@pytest.mark.parametrize("policy", [FCFSEasy(), BinPacking(), RandomPolicy()],
                         ids=lambda p: p.name)
def test_invariants_on_random_jobsets(policy):
    for seed in range(15):
        js = random_jobset(seed, n_jobs=50, n_nodes=32)
        res = run_simulation(js, policy, 32, seed=seed)
        check_result(js, res, 32)
        last = {}
        for _, job_id, t in res.reservations:
            last[job_id] = t
        for r in res.jobs:
            if r.mode is Mode.RESERVED:
                assert r.start <= last[r.job_id]


def test_runs_are_deterministic():
    js = random_jobset(3, n_jobs=80)
    a = run_simulation(js, RandomPolicy(), 64, seed=9)
    b = run_simulation(js, RandomPolicy(), 64, seed=9)
    assert a.jobs_csv() == b.jobs_csv() and a.instances_csv() == b.instances_csv()
    c = run_simulation(js, RandomPolicy(), 64, seed=np.random.default_rng(9))
    assert c.jobs_csv() == a.jobs_csv()
