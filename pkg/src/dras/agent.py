"""Reservation-aware RL scheduling agents.

At each scheduling instance the agent picks jobs one at a time from a window
at the front of the queue. A pick that fits starts now; the first pick that
does not fit is reserved at its earliest start, after which picks come from
the backfill candidates only. Policy-gradient (``pg``) and deep Q-learning
(``dql``) agents share this procedure; ``noreserve`` drops the reservation
level and only ever starts runnable jobs.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, ContractViolation
from .neuralnet import (
    AdamState,
    adam_step,
    backward,
    forward,
    init_params,
    load_model,
    save_model,
)
from .simcore import Mode
from .validation import check_fraction, check_positive_int, check_weights

ALGORITHMS = {"pg": "policy", "dql": "q", "noreserve": "policy"}
REWARD_KINDS = ("capability", "capacity", "capacity-linear")


@dataclass(frozen=True)
class AgentConfig:
    window: int = 10
    reward_kind: str = "capability"
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    gamma: float = 1.0
    learning_rate: float = 0.001
    update_every: int = 10
    epsilon0: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    time_scale: float = 86400.0
    size_scale: float | None = None  # None: the system size
    hidden1: int = 256
    hidden2: int = 64

    def __post_init__(self):
        check_positive_int(self.window, "window")
        check_positive_int(self.update_every, "update_every")
        check_positive_int(self.hidden1, "hidden1")
        check_positive_int(self.hidden2, "hidden2")
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigurationError(f"unknown reward kind {self.reward_kind!r}")
        object.__setattr__(self, "weights", check_weights(self.weights))
        check_fraction(self.gamma, "gamma")
        check_fraction(self.epsilon0, "epsilon0")
        check_fraction(self.epsilon_min, "epsilon_min", 0.0, self.epsilon0)
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ConfigurationError("epsilon_decay must lie in (0, 1]")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.time_scale <= 0:
            raise ConfigurationError("time_scale must be > 0")


def epsilon_at(update_index, config):
    if update_index < 0:
        raise ValueError("update_index must be >= 0")
    return max(config.epsilon_min, config.epsilon0 * config.epsilon_decay ** update_index)


def _size_scale(config, n_nodes):
    return float(config.size_scale or n_nodes)


def encode_job(job, now, config, n_nodes):
    """The 2x2 block for one waiting job."""
    ts = config.time_scale
    return np.array([[job.size / _size_scale(config, n_nodes), job.runtime_estimate / ts],
                     [job.priority, (now - job.submit_time) / ts]])


def _scaled_nodes(node_view, config):
    nodes = np.array(node_view, dtype=float, copy=True)
    nodes[:, 1] /= config.time_scale
    return nodes


def encode_pg_state(window, node_view, now, config):
    """``(2W + N, 2)`` state and a length-W validity mask."""
    w = config.window
    if len(window) > w:
        raise ContractViolation(f"{len(window)} jobs passed for a window of {w}")
    n = len(node_view)
    x = np.zeros((2 * w + n, 2))
    mask = np.zeros(w, dtype=bool)
    for i, job in enumerate(window):
        x[2 * i:2 * i + 2] = encode_job(job, now, config, n)
        mask[i] = True
    x[2 * w:] = _scaled_nodes(node_view, config)
    return x, mask


def encode_dql_state(job, node_view, now, config):
    """``(2 + N, 2)`` state for a single candidate job."""
    n = len(node_view)
    x = np.empty((2 + n, 2))
    x[:2] = encode_job(job, now, config, n)
    x[2:] = _scaled_nodes(node_view, config)
    return x


def encode_dql_window(window, node_view, now, config):
    n = len(node_view)
    nodes = _scaled_nodes(node_view, config)
    x = np.empty((len(window), 2 + n, 2))
    x[:, 2:] = nodes
    for i, job in enumerate(window):
        x[i, :2] = encode_job(job, now, config, n)
    return x


def compute_reward(kind, weights, selected, queue, n_nodes, used_nodes, now, time_scale=86400.0):
    """Reward after one selection.

    ``selected`` are the jobs picked so far in this instance; ``queue`` is
    what is still waiting afterwards (a reserved job is still waiting) and
    ``used_nodes`` the occupancy afterwards.
    """
    if kind == "capability":
        w1, w2, w3 = weights
        if not selected:
            return w3 * used_nodes / n_nodes
        waits = [now - j.submit_time for j in selected]
        ids = {j.id for j in selected}
        all_waits = waits + [now - j.submit_time for j in queue if j.id not in ids]
        t_max = max(1.0, max(all_waits))
        mean_wait = sum(waits) / len(waits)
        mean_size = sum(j.size for j in selected) / len(selected)
        return w1 * mean_wait / t_max + w2 * mean_size / n_nodes + w3 * used_nodes / n_nodes
    if kind == "capacity":
        total = sum(-1.0 / max(now - j.submit_time, 1.0) for j in queue)
        return total / max(1, len(queue))
    if kind == "capacity-linear":
        total = sum(now - j.submit_time for j in queue)
        return -total / max(1, len(queue)) / time_scale
    raise ValueError(f"unknown reward kind {kind!r}")


class RewardFunction:
    """Scores any policy's actions at one instance exactly as the agent does.

    Called by the simulator as ``reward_fn(view_before, actions)``.
    """

    def __init__(self, kind="capability", weights=(1 / 3, 1 / 3, 1 / 3), time_scale=86400.0):
        self.kind = kind
        self.weights = tuple(weights)
        self.time_scale = time_scale

    @classmethod
    def from_config(cls, config):
        return cls(config.reward_kind, config.weights, config.time_scale)

    def after(self, view, selected):
        return compute_reward(self.kind, self.weights, selected, view.queue, view.total_nodes,
                              view.cluster.used_nodes, view.now, self.time_scale)

    def per_action(self, view_before, actions):
        view = view_before.copy()
        by_id = {j.id: j for j in view.queue}
        selected = []
        rewards = []
        for a in actions:
            job = by_id[a.job_id]
            if a.mode is Mode.RESERVED:
                view.reserve(job)
            else:
                view.start(job, a.mode)
            selected.append(job)
            rewards.append(self.after(view, selected))
        return rewards

    def __call__(self, view_before, actions):
        return float(sum(self.per_action(view_before, actions)))


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float = 0.0
    mask: np.ndarray | None = None  # pg
    candidates: np.ndarray | None = None  # dql: every window encoding at this step
    next_candidates: np.ndarray | None = None  # dql: filled at the next selection
    done: bool = False


@dataclass
class BaselineStore:
    """Running mean of the return from step k onwards, over past updates."""

    means: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    def query(self, k):
        if not self.means:
            return 0.0
        return self.means[min(k, len(self.means) - 1)]

    def values(self, n):
        return np.array([self.query(k) for k in range(n)])

    def update(self, returns):
        for k, g in enumerate(returns):
            if k == len(self.means):
                self.means.append(0.0)
                self.counts.append(0)
            self.counts[k] += 1
            self.means[k] += (float(g) - self.means[k]) / self.counts[k]

    def to_dict(self):
        return {"means": list(self.means), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d):
        return cls(list(map(float, d["means"])), list(map(int, d["counts"])))


def discounted_returns(rewards, gamma=1.0):
    out = np.empty(len(rewards))
    acc = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        acc = rewards[k] + gamma * acc
        out[k] = acc
    return out


def pg_gradients(params, transitions, baseline, gamma=1.0):
    """Summed grad of log pi(a_k | s_k) * (G_k - b_k), and the returns."""
    rewards = [t.reward for t in transitions]
    returns = discounted_returns(rewards, gamma)
    adv = returns - baseline.values(len(transitions))
    states = np.stack([t.state for t in transitions])
    masks = np.stack([t.mask for t in transitions])
    probs, cache = forward(params, states, valid_mask=masks)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(transitions)), [t.action for t in transitions]] = 1.0
    d_logits = adv[:, None] * (onehot - probs)
    return backward(params, cache, logits_grad=d_logits), returns


def _all_zero(grads):
    return all(not g.any() for g in grads.values())


def pg_update(params, adam, transitions, baseline, lr, gamma=1.0):
    """Policy-gradient ascent step over one batch. Returns True if applied.

    A batch whose gradient is exactly zero leaves parameters and optimizer
    state untouched.
    """
    if not transitions:
        return False
    grads, returns = pg_gradients(params, transitions, baseline, gamma)
    baseline.update(returns)
    if _all_zero(grads):
        return False
    adam_step(params, grads, adam, lr, "ascend")
    return True


def dql_targets(params, transitions, gamma=1.0):
    targets = np.array([t.reward for t in transitions], dtype=float)
    live = [i for i, t in enumerate(transitions) if not t.done]
    if live and gamma != 0.0:
        nxt = [transitions[i].next_candidates for i in live]
        if any(c is None for c in nxt):
            raise ContractViolation("non-terminal transition without next-state candidates")
        q, _ = forward(params, np.concatenate(nxt))
        bounds = np.cumsum([0] + [len(c) for c in nxt])
        for i, lo, hi in zip(live, bounds[:-1], bounds[1:]):
            targets[i] += gamma * q[lo:hi].max()
    return targets


def dql_gradients(params, transitions, gamma=1.0):
    """Gradient of 0.5 * sum (y_k - Q(s_k, a_k))^2 with y_k held fixed."""
    y = dql_targets(params, transitions, gamma)
    q, cache = forward(params, np.stack([t.state for t in transitions]))
    td = y - q
    return backward(params, cache, output_grad=-td), td


def dql_update(params, adam, transitions, lr, gamma=1.0):
    if not transitions:
        return False
    grads, _ = dql_gradients(params, transitions, gamma)
    if _all_zero(grads):
        return False
    adam_step(params, grads, adam, lr, "descend")
    return True


def schedule_instance(agent, view, rng, select=None):
    """Run the two-level selection procedure on ``view``.

    Returns ``(actions, transitions)``. ``select(window, view)``, when given,
    replaces the network's choice with a fixed rule (for testing).
    """
    config = agent.config_
    reward_fn = RewardFunction.from_config(config)
    actions, transitions, selected = [], [], []
    w = config.window

    def take(window, mode=None):
        idx, tr = agent._choose(window, view, rng, select)
        job = window[idx]
        if mode is None:
            mode = Mode.READY if view.fits(job) else Mode.RESERVED
        if mode is Mode.RESERVED:
            actions.append(view.reserve(job))
        else:
            actions.append(view.start(job, mode))
        selected.append(job)
        tr.reward = reward_fn.after(view, selected)
        transitions.append(tr)
        agent._remember(tr)

    if agent.algorithm == "noreserve":
        while True:
            runnable = view.runnable()
            if not runnable:
                break
            take(runnable[:w], Mode.READY)
        return actions, transitions

    # level 1: immediate starts until a pick does not fit, which is reserved
    if view.reservation is None:
        while view.queue and view.reservation is None:
            take(view.queue[:w])
    # level 2: backfill around the reservation
    if view.reservation is not None:
        while True:
            cands = view.backfill_candidates()
            if not cands:
                break
            take(cands[:w], Mode.BACKFILLED)
    return actions, transitions


class DRASAgent(BaseEstimator):
    """Learning scheduler usable as a simulation policy.

    Parameters
    ----------
    algorithm : {"pg", "dql", "noreserve"}
        Policy gradient, deep Q-learning, or policy gradient without the
        reservation/backfilling level.
    n_nodes : int
        System size N; fixes the network input extent.
    window : int
        Jobs visible to the network per selection.
    random_state : int
        Seeds weight initialization.

    The remaining parameters mirror :class:`AgentConfig`.
    """

    def __init__(self, algorithm="pg", n_nodes=64, window=10, hidden1=256, hidden2=64,
                 reward_kind="capability", weights=(1 / 3, 1 / 3, 1 / 3), gamma=1.0,
                 learning_rate=0.001, update_every=10, epsilon0=1.0, epsilon_decay=0.995,
                 epsilon_min=0.01, time_scale=86400.0, size_scale=None, random_state=0):
        self.algorithm = algorithm
        self.n_nodes = n_nodes
        self.window = window
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.reward_kind = reward_kind
        self.weights = weights
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.update_every = update_every
        self.epsilon0 = epsilon0
        self.epsilon_decay = epsilon_decay
        self.epsilon_min = epsilon_min
        self.time_scale = time_scale
        self.size_scale = size_scale
        self.random_state = random_state

    # -- configuration -------------------------------------------------
    @property
    def config_(self):
        return AgentConfig(self.window, self.reward_kind, tuple(self.weights), self.gamma,
                           self.learning_rate, self.update_every, self.epsilon0,
                           self.epsilon_decay, self.epsilon_min, self.time_scale,
                           self.size_scale, self.hidden1, self.hidden2)

    @classmethod
    def from_config(cls, config, algorithm="pg", n_nodes=64, random_state=0):
        return cls(algorithm=algorithm, n_nodes=n_nodes, window=config.window,
                   hidden1=config.hidden1, hidden2=config.hidden2,
                   reward_kind=config.reward_kind, weights=config.weights, gamma=config.gamma,
                   learning_rate=config.learning_rate, update_every=config.update_every,
                   epsilon0=config.epsilon0, epsilon_decay=config.epsilon_decay,
                   epsilon_min=config.epsilon_min, time_scale=config.time_scale,
                   size_scale=config.size_scale, random_state=random_state)

    @property
    def head(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        return ALGORITHMS[self.algorithm]

    @property
    def input_rows(self):
        if self.algorithm == "dql":
            return 2 + self.n_nodes
        return 2 * self.window + self.n_nodes

    def initialize(self, params=None, adam=None):
        """Create (or adopt) parameters and reset all learning state."""
        config = self.config_
        check_positive_int(self.n_nodes, "n_nodes")
        n_out = 1 if self.head == "q" else config.window
        if params is None:
            params = init_params(self.input_rows, config.hidden1, config.hidden2, n_out,
                                 self.head, seed=self.random_state)
        self._check_params(params)
        self.params_ = params
        self.adam_ = adam
        self.baseline_ = BaselineStore()
        self.n_updates_ = adam.step if adam is not None else 0
        self.training_ = False
        self.memory_ = []
        self.instances_ = 0
        return self

    def _check_params(self, params):
        if params.head != self.head:
            raise ConfigurationError(
                f"model has a {params.head} head but {self.algorithm} needs {self.head}")
        rows, h1, h2, o = params.dims
        n_out = 1 if self.head == "q" else self.window
        if rows != self.input_rows or o != n_out:
            raise ConfigurationError(
                f"model dims {params.dims} do not match N={self.n_nodes}, W={self.window}")
        if (h1, h2) != (self.hidden1, self.hidden2):
            self.hidden1, self.hidden2 = h1, h2

    def _ensure_adam(self):
        if self.adam_ is None:
            self.adam_ = AdamState.zeros_like(self.params_)
        return self.adam_

    @property
    def epsilon_(self):
        return epsilon_at(self.n_updates_, self.config_)

    # -- acting --------------------------------------------------------
    def _choose(self, window, view, rng, select=None):
        config = self.config_
        nodes = view.node_view()
        if self.head == "policy":
            x, mask = encode_pg_state(window, nodes, view.now, config)
            if select is not None:
                idx = select(window, view)
            else:
                probs, _ = forward(self.params_, x, valid_mask=mask)
                if self.training_:
                    idx = int(rng.choice(len(probs), p=probs))
                else:
                    idx = int(np.argmax(probs))
            if not 0 <= idx < len(window) or not mask[idx]:
                raise ContractViolation(f"selected window slot {idx} is not valid")
            return idx, Transition(state=x, action=idx, mask=mask)
        xs = encode_dql_window(window, nodes, view.now, config)
        self._link_next(xs)
        if select is not None:
            idx = select(window, view)
        else:
            eps = self.epsilon_ if self.training_ else config.epsilon_min
            if rng.random() < eps:
                idx = int(rng.integers(len(window)))
            else:
                q, _ = forward(self.params_, xs)
                idx = int(np.argmax(q))
        if not 0 <= idx < len(window):
            raise ContractViolation(f"selected candidate {idx} is out of range")
        return idx, Transition(state=xs[idx], action=idx, candidates=xs)

    def _link_next(self, candidates):
        if self.training_ and self.memory_:
            last = self.memory_[-1]
            if last.next_candidates is None and not last.done:
                last.next_candidates = candidates

    def _remember(self, tr):
        if self.training_:
            self.memory_.append(tr)

    def decide(self, view, rng):
        check_is_fitted(self, "params_")
        actions, transitions = schedule_instance(self, view, rng)
        if self.training_ and transitions:
            self.instances_ += 1
            if self.instances_ % self.update_every == 0:
                self.update()
        return actions

    # -- learning ------------------------------------------------------
    def update(self, final=False):
        """Apply one parameter update from memory and clear it.

        For DQL a trailing transition whose next state is not known yet is
        kept for the next batch unless ``final``.
        """
        if not self.memory_:
            return False
        config = self.config_
        adam = self._ensure_adam()
        if self.head == "policy":
            batch, keep = self.memory_, []
            applied = pg_update(self.params_, adam, batch, self.baseline_,
                                config.learning_rate, config.gamma)
        else:
            if final:
                self.memory_[-1].done = True
                batch, keep = self.memory_, []
            else:
                last = self.memory_[-1]
                pending = last.next_candidates is None and not last.done
                batch, keep = (self.memory_[:-1], [last]) if pending else (self.memory_, [])
            applied = dql_update(self.params_, adam, batch, config.learning_rate, config.gamma)
        self.memory_ = keep
        self.n_updates_ += 1
        return applied

    def begin_episode(self, training=True):
        check_is_fitted(self, "params_")
        self.training_ = training
        self.memory_ = []
        self.instances_ = 0

    def end_episode(self):
        """Flush a partial batch as a final update; returns to evaluation mode."""
        if self.training_:
            self.update(final=True)
        self.training_ = False
        self.memory_ = []

    def fit(self, curriculum, episodes=None, snapshot_dir=None, seed=None, warm_start=False):
        """Train over a curriculum (or a plain list of jobsets)."""
        from .trainer import train_agent

        if not (warm_start and hasattr(self, "params_")):
            self.initialize()
        seed = self.random_state if seed is None else seed
        self.report_ = train_agent(self, curriculum, seed=seed, episodes=episodes,
                                   snapshot_dir=snapshot_dir)
        return self

    def predict(self, jobset, seed=0):
        """Frozen-model simulation of ``jobset``; returns the SimulationResult."""
        from .simcore import run_simulation

        check_is_fitted(self, "params_")
        self.begin_episode(training=False)
        return run_simulation(jobset, self, self.n_nodes, seed,
                              RewardFunction.from_config(self.config_))

    def score(self, jobset, seed=0):
        """Total reward collected by the frozen model on ``jobset``."""
        return self.predict(jobset, seed).total_reward

    # -- persistence ---------------------------------------------------
    def save(self, path):
        """Write the model file plus a ``.state.json`` sidecar with learner state."""
        check_is_fitted(self, "params_")
        save_model(self.params_, self._ensure_adam(), path)
        state = {"algorithm": self.algorithm, "n_updates": self.n_updates_,
                 "baseline": self.baseline_.to_dict(),
                 "episodes_done": getattr(self, "episodes_done_", 0)}
        with open(str(path) + ".state.json", "w") as fh:
            json.dump(state, fh, sort_keys=True)

    def load(self, path):
        params, adam = load_model(path)
        self.initialize(params, adam)
        side = str(path) + ".state.json"
        if os.path.exists(side):
            with open(side) as fh:
                state = json.load(fh)
            self.n_updates_ = int(state["n_updates"])
            self.baseline_ = BaselineStore.from_dict(state["baseline"])
            self.episodes_done_ = int(state.get("episodes_done", 0))
        return self
