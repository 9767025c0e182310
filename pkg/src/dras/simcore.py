"""Event-driven simulation of a homogeneous cluster with one EASY-style
reservation.

Policies see a :class:`SchedulingView`, a private copy of the wait queue and
cluster that they can mutate speculatively through ``start``/``reserve``.
The simulator replays the returned actions on its own state and rejects any
that break the contract.
"""

import bisect
import heapq
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import ConfigurationError, ContractViolation, SimulationError
from .validation import check_positive_int, check_random_state


class Mode(str, Enum):
    READY = "ready"
    RESERVED = "reserved"
    BACKFILLED = "backfilled"

    def __str__(self):
        return self.value


COMPLETION, ARRIVAL = 0, 1  # completion sorts first at equal times


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: int
    sequence: int
    job_id: int

    def key(self):
        return (self.time, self.kind, self.sequence)


@dataclass(frozen=True)
class ScheduleAction:
    job_id: int
    mode: Mode
    start_time: float


@dataclass(frozen=True)
class Reservation:
    job_id: int
    start_time: float
    size: int


@dataclass
class RunningJob:
    start_time: float
    nodes: np.ndarray
    end_time: float  # start + min(actual, estimate): when the job really stops
    est_end: float  # start + estimate: what the scheduler is allowed to know
    size: int


class ClusterState:
    """Per-node availability plus running jobs and the active reservation."""

    def __init__(self, total_nodes):
        self.total_nodes = check_positive_int(total_nodes, "total_nodes")
        self.available = np.ones(total_nodes, dtype=bool)
        self.est_available = np.zeros(total_nodes)
        self.running = {}
        self.reservation = None
        self.free_nodes = total_nodes

    def copy(self):
        c = ClusterState.__new__(ClusterState)
        c.total_nodes = self.total_nodes
        c.available = self.available.copy()
        c.est_available = self.est_available.copy()
        c.running = dict(self.running)
        c.reservation = self.reservation
        c.free_nodes = self.free_nodes
        return c

    @property
    def used_nodes(self):
        return self.total_nodes - self.free_nodes

    def allocate(self, job, now):
        if job.size > self.free_nodes:
            raise ContractViolation(f"job {job.id} needs {job.size} nodes, {self.free_nodes} free")
        nodes = np.flatnonzero(self.available)[:job.size]
        self.available[nodes] = False
        est_end = now + job.runtime_estimate
        self.est_available[nodes] = est_end
        self.free_nodes -= job.size
        rj = RunningJob(now, nodes, now + job.duration, est_end, job.size)
        self.running[job.id] = rj
        return rj

    def release(self, job_id):
        rj = self.running.pop(job_id)
        self.available[rj.nodes] = True
        self.est_available[rj.nodes] = 0.0
        self.free_nodes += rj.size
        return rj

    def _release_keys(self, now):
        return np.where(self.available, now, np.maximum(self.est_available, now))

    def earliest_start(self, size, now):
        """Earliest time ``size`` nodes are free by the running jobs' estimates,
        and the nodes that would be claimed (soonest-free first)."""
        if size > self.total_nodes:
            raise ConfigurationError(f"size {size} exceeds {self.total_nodes} nodes")
        keys = self._release_keys(now)
        order = np.lexsort((np.arange(self.total_nodes), keys))
        claimed = order[:size]
        return float(keys[claimed[-1]]), np.sort(claimed)

    def free_at(self, t, now):
        """Nodes free at time ``t`` if nothing else starts."""
        return int((self._release_keys(now) <= t).sum())

    def node_view(self, now):
        """``(N, 2)`` array of (available flag, estimated time until free)."""
        out = np.empty((self.total_nodes, 2))
        out[:, 0] = self.available
        out[:, 1] = np.where(self.available, 0.0, np.maximum(self.est_available - now, 0.0))
        return out


def earliest_reservation_time(cluster, job, now):
    """Return ``(T, node_ids)`` for reserving ``job``; ``T >= now``."""
    return cluster.earliest_start(job.size, now)


def backfill_candidates(cluster, queue, now):
    """Queued jobs that may start now without delaying the reservation.

    A job qualifies when it fits the free nodes and either finishes (by its
    estimate) no later than the reserved start, or only uses nodes the
    reserved job will not need at that time.
    """
    res = cluster.reservation
    if res is None:
        raise ContractViolation("backfill_candidates requires an active reservation")
    free_now = cluster.free_nodes
    extra = min(free_now, cluster.free_at(res.start_time, now) - res.size)
    return [j for j in queue
            if j.id != res.job_id and j.size <= free_now
            and (now + j.runtime_estimate <= res.start_time or j.size <= extra)]


def scheduling_view(cluster, queue, now):
    """Read-only arrays handed to encoders.

    Returns ``(jobs, nodes)``: jobs is ``(Q, 4)`` of (size, estimate,
    priority, queued time); nodes is ``(N, 2)`` of (available, time to free).
    """
    jobs = np.array([[j.size, j.runtime_estimate, j.priority, now - j.submit_time]
                     for j in queue], dtype=float).reshape(len(queue), 4)
    nodes = cluster.node_view(now)
    jobs.flags.writeable = False
    nodes.flags.writeable = False
    return jobs, nodes


class SchedulingView:
    """What a policy sees at one scheduling instance.

    ``queue`` holds the visible waiting jobs in arrival order. ``start`` and
    ``reserve`` update this private copy and return the action to emit, so a
    policy can make several dependent selections in one call.
    """

    def __init__(self, now, queue, cluster):
        self.now = now
        self.queue = list(queue)
        self.cluster = cluster.copy()

    def copy(self):
        return SchedulingView(self.now, self.queue, self.cluster)

    @property
    def total_nodes(self):
        return self.cluster.total_nodes

    @property
    def free_nodes(self):
        return self.cluster.free_nodes

    @property
    def reservation(self):
        return self.cluster.reservation

    def fits(self, job):
        return job.size <= self.cluster.free_nodes

    def runnable(self):
        free = self.cluster.free_nodes
        return [j for j in self.queue if j.size <= free]

    def backfill_candidates(self):
        return backfill_candidates(self.cluster, self.queue, self.now)

    def node_view(self):
        return self.cluster.node_view(self.now)

    def arrays(self):
        return scheduling_view(self.cluster, self.queue, self.now)

    def start(self, job, mode=Mode.READY):
        return apply_action(self.queue, self.cluster, ScheduleAction(job.id, Mode(mode), self.now),
                            self.now)

    def reserve(self, job):
        t, _ = earliest_reservation_time(self.cluster, job, self.now)
        return apply_action(self.queue, self.cluster, ScheduleAction(job.id, Mode.RESERVED, t),
                            self.now)


def _find(queue, job_id):
    for i, j in enumerate(queue):
        if j.id == job_id:
            return i
    raise ContractViolation(f"job {job_id} is not in the wait queue")


def apply_action(queue, cluster, action, now):
    """Validate ``action`` against (queue, cluster) and apply it in place."""
    i = _find(queue, action.job_id)
    job = queue[i]
    res = cluster.reservation
    mode = Mode(action.mode)
    if mode is Mode.RESERVED:
        if res is not None:
            raise ContractViolation(f"job {job.id}: a reservation for job {res.job_id} is active")
        if job.size <= cluster.free_nodes:
            raise ContractViolation(f"job {job.id} fits now and cannot be reserved")
        t, _ = cluster.earliest_start(job.size, now)
        if action.start_time != t:
            raise ContractViolation(
                f"job {job.id}: reserved start {action.start_time} != earliest {t}")
        cluster.reservation = Reservation(job.id, t, job.size)
        return action
    if action.start_time != now:
        raise ContractViolation(f"job {job.id}: {mode} actions start now")
    if mode is Mode.READY:
        if res is not None:
            raise ContractViolation(f"job {job.id}: ready start while job {res.job_id} is reserved")
        if job.size > cluster.free_nodes:
            raise ContractViolation(f"job {job.id} does not fit")
    else:
        if res is None:
            raise ContractViolation(f"job {job.id}: backfill without a reservation")
        if job not in backfill_candidates(cluster, [job], now):
            raise ContractViolation(f"job {job.id} would delay reserved job {res.job_id}")
    cluster.allocate(job, now)
    del queue[i]
    return action


@dataclass
class JobRecord:
    job_id: int
    submit: float
    start: float
    end: float
    size: int
    mode: Mode
    runtime_estimate: float


@dataclass
class InstanceRecord:
    time: float
    queue_len: int
    free_nodes: int
    n_actions: int
    reward: float | None = None


@dataclass
class SimulationResult:
    n_nodes: int
    jobs: list = field(default_factory=list)
    instances: list = field(default_factory=list)
    # (time, job_id, reserved start) each time a reservation is made or refreshed
    reservations: list = field(default_factory=list)

    @property
    def first_submit(self):
        return min((r.submit for r in self.jobs), default=None)

    @property
    def last_completion(self):
        return max((r.end for r in self.jobs), default=None)

    @property
    def utilization_defined(self):
        return bool(self.jobs) and self.last_completion > self.first_submit

    @property
    def total_reward(self):
        return float(sum(r.reward for r in self.instances if r.reward is not None))

    def sorted_jobs(self):
        return sorted(self.jobs, key=lambda r: r.job_id)

    def jobs_csv(self):
        buf = io.StringIO()
        buf.write("job_id,submit,start,end,size,mode\n")
        for r in self.sorted_jobs():
            buf.write(f"{r.job_id},{_num(r.submit)},{_num(r.start)},{_num(r.end)},{r.size},{r.mode}\n")
        return buf.getvalue()

    def instances_csv(self):
        buf = io.StringIO()
        buf.write("time,queue_len,free_nodes,n_actions,reward\n")
        for r in self.instances:
            reward = "" if r.reward is None else repr(float(r.reward))
            buf.write(f"{_num(r.time)},{r.queue_len},{r.free_nodes},{r.n_actions},{reward}\n")
        return buf.getvalue()


def _num(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _policy_callable(policy):
    if hasattr(policy, "decide"):
        return policy.decide
    if callable(policy):
        return policy
    raise TypeError("policy must be callable or define decide(view, rng)")


class Simulator:
    """One run of a jobset under a policy. Use :func:`run_simulation`."""

    def __init__(self, jobset, policy, n_nodes, seed, reward_fn=None):
        self.n_nodes = check_positive_int(n_nodes, "n_nodes")
        for j in jobset:
            if j.size > n_nodes:
                raise ConfigurationError(f"job {j.id} needs {j.size} nodes; system has {n_nodes}")
        self.jobs = {j.id: j for j in jobset}
        if len(self.jobs) != len(jobset):
            raise ConfigurationError("duplicate job ids in jobset")
        self.decide = _policy_callable(policy)
        self.rng = check_random_state(seed)
        self.reward_fn = reward_fn
        self.cluster = ClusterState(n_nodes)
        self.queue = []  # sorted by (submit, id)
        self.hidden = {}  # job id -> unfinished parent ids
        self.children = {}
        self.done = set()
        self.events = []
        self.seq = 0
        self.result = SimulationResult(n_nodes)
        self.modes = {}
        for j in jobset:
            self._push(j.submit_time, ARRIVAL, j.id)

    def _push(self, t, kind, job_id):
        ev = SimEvent(t, kind, self.seq, job_id)
        self.seq += 1
        heapq.heappush(self.events, (ev.key(), ev))

    def _enqueue(self, job):
        keys = [j.sort_key for j in self.queue]
        self.queue.insert(bisect.bisect(keys, job.sort_key), job)

    def _arrive(self, job):
        pending = {d for d in job.dependencies if d not in self.done}
        if pending:
            self.hidden[job.id] = pending
            for d in pending:
                self.children.setdefault(d, []).append(job.id)
        else:
            self._enqueue(job)

    def _complete(self, job_id):
        self.cluster.release(job_id)
        self.done.add(job_id)
        for child in self.children.pop(job_id, []):
            waiting = self.hidden.get(child)
            if waiting is None:
                continue
            waiting.discard(job_id)
            if not waiting:
                del self.hidden[child]
                self._enqueue(self.jobs[child])

    def _refresh_reservation(self, now):
        """Start the reserved job if it fits, otherwise recompute its start."""
        res = self.cluster.reservation
        if res is None:
            return
        job = self.queue[_find(self.queue, res.job_id)]
        if job.size <= self.cluster.free_nodes:
            self.cluster.reservation = None
            self.queue.remove(job)
            self.cluster.allocate(job, now)
            self._record_start(job, Mode.RESERVED, now)
            return
        t, _ = self.cluster.earliest_start(job.size, now)
        if t > res.start_time:
            raise SimulationError(f"reservation of job {job.id} slipped from {res.start_time} to {t}")
        self.cluster.reservation = Reservation(job.id, t, job.size)
        self.result.reservations.append((now, job.id, t))

    def _instance(self, now):
        self._refresh_reservation(now)
        if not self.queue:
            self.result.instances.append(InstanceRecord(now, 0, self.cluster.free_nodes, 0))
            return
        view = SchedulingView(now, self.queue, self.cluster)
        before = view.copy() if self.reward_fn is not None else None
        actions = list(self.decide(view, self.rng) or ())
        for a in actions:
            job = self.jobs.get(a.job_id)
            if job is None:
                raise ContractViolation(f"unknown job id {a.job_id}")
            apply_action(self.queue, self.cluster, a, now)
            if a.mode is Mode.RESERVED:
                self.result.reservations.append((now, a.job_id, a.start_time))
            else:
                self._record_start(job, a.mode, now)
        reward = self.reward_fn(before, actions) if self.reward_fn is not None else None
        self.result.instances.append(
            InstanceRecord(now, len(self.queue), self.cluster.free_nodes, len(actions), reward))

    def _record_start(self, job, mode, now):
        rj = self.cluster.running[job.id]
        self.modes[job.id] = mode
        self.result.jobs.append(JobRecord(job.id, job.submit_time, now, rj.end_time, job.size,
                                          mode, job.runtime_estimate))
        self._push(rj.end_time, COMPLETION, job.id)

    def run(self):
        while self.events:
            (now, _, _), _ = self.events[0]
            while self.events and self.events[0][0][0] == now:
                _, ev = heapq.heappop(self.events)
                if ev.kind == COMPLETION:
                    self._complete(ev.job_id)
                else:
                    self._arrive(self.jobs[ev.job_id])
            self._instance(now)
        if self.queue or self.hidden:
            stuck = [j.id for j in self.queue] + list(self.hidden)
            raise SimulationError(f"policy left {len(stuck)} job(s) unscheduled on an idle "
                                  f"cluster, e.g. job {stuck[0]}")
        return self.result


def run_simulation(jobset, policy, n_nodes, seed=0, reward_fn=None):
    """Simulate ``jobset`` on ``n_nodes`` nodes under ``policy``.

    ``policy`` is any object with ``decide(view, rng)`` (or a plain callable
    with that signature) returning a sequence of :class:`ScheduleAction`.
    ``reward_fn(view_before, actions)``, when given, scores every instance.
    """
    return Simulator(jobset, policy, n_nodes, seed, reward_fn).run()
