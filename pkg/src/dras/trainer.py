"""Episodic training over a sampled → real → synthetic jobset curriculum."""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentConfig, DRASAgent, RewardFunction
from .exceptions import ConfigurationError, DRASError, EmptyTraceError, SimulationError
from .metrics import compute_metrics
from .neuralnet import NetworkParams
from .simcore import run_simulation
from .validation import check_jobset, check_positive_int
from .workload import JobSet, compute_stats, sample_jobset, split_jobset, synthesize_jobset

PHASES = ("sampled", "real", "synthetic")


@dataclass
class Curriculum:
    """Ordered ``(phase, [JobSet, ...])`` groups, visited front to back."""

    phases: list

    def __post_init__(self):
        self.phases = [(p, list(sets)) for p, sets in self.phases if sets]
        if not self.phases:
            raise ConfigurationError("empty curriculum")
        for p, _ in self.phases:
            if p not in PHASES:
                raise ConfigurationError(f"unknown curriculum phase {p!r}")

    @classmethod
    def from_jobsets(cls, jobsets, phase="real"):
        return cls([(phase, list(jobsets))])

    def episodes(self):
        """Flat ``[(phase, jobset)]`` in curriculum order."""
        return [(p, js) for p, sets in self.phases for js in sets]

    def __len__(self):
        return sum(len(s) for _, s in self.phases)


def _sub_seed(seed, phase, i):
    return int(np.random.SeedSequence([int(seed), phase, i]).generate_state(1)[0])


def real_slices(trace, n):
    """Cut ``trace`` into ``n`` consecutive slices of equal time span."""
    check_positive_int(n, "n_real")
    if n > len(trace):
        raise ConfigurationError(f"cannot cut {len(trace)} jobs into {n} slices")
    t0, t1 = trace[0].submit_time, trace[len(trace) - 1].submit_time
    span = (t1 - t0) / n
    bounds = [t0 + span * k for k in range(1, n)]
    parts = split_jobset(trace, bounds)
    for k, part in enumerate(parts):
        if len(part) == 0:
            raise ConfigurationError(f"real slice {k + 1} of {n} holds no jobs")
    return parts


def build_curriculum(trace, counts=(3, 3, 6), jobs_per_set=200, seed=0):
    """Build the three-phase curriculum from a training trace.

    ``counts`` is ``(n_sampled, n_real, n_synthetic)``. Sampled jobsets
    resample the trace; real ones are equal time slices of it; synthetic
    ones are drawn from its fitted patterns.
    """
    check_jobset(trace)
    n_sampled, n_real, n_synth = (int(c) for c in counts)
    if min(n_sampled, n_real, n_synth) < 0:
        raise ConfigurationError(f"curriculum counts must be >= 0, got {tuple(counts)}")
    if n_sampled + n_real + n_synth == 0:
        raise ConfigurationError("empty curriculum")
    check_positive_int(jobs_per_set, "jobs_per_set")
    sampled = [sample_jobset(trace, jobs_per_set, _sub_seed(seed, 1, i), label=f"sampled_{i}")
               for i in range(n_sampled)]
    real = real_slices(trace, n_real) if n_real else []
    synthetic = []
    if n_synth:
        stats = compute_stats(trace)
        synthetic = [synthesize_jobset(stats, jobs_per_set, _sub_seed(seed, 3, i),
                                       label=f"synthetic_{i}") for i in range(n_synth)]
    return Curriculum([("sampled", sampled), ("real", real), ("synthetic", synthetic)])


@dataclass
class EpisodeEntry:
    episode: int
    phase: str
    total_reward: float
    wall_time: float
    epsilon: float
    snapshot_path: str = ""


@dataclass
class TrainingReport:
    entries: list = field(default_factory=list)

    @property
    def rewards(self):
        return [e.total_reward for e in self.entries]

    def phase_boundaries(self):
        """``[(phase, first_episode, last_episode)]`` in visiting order."""
        out = []
        for e in self.entries:
            if out and out[-1][0] == e.phase:
                out[-1] = (e.phase, out[-1][1], e.episode)
            else:
                out.append((e.phase, e.episode, e.episode))
        return out

    def to_csv(self):
        # wall time is left out so the file is reproducible
        lines = ["episode,phase,total_reward,epsilon,snapshot_path"]
        for e in self.entries:
            lines.append(f"{e.episode},{e.phase},{e.total_reward!r},{e.epsilon!r},"
                         f"{e.snapshot_path}")
        return "\n".join(lines) + "\n"

    def plateau(self, window=5, tol=0.01):
        return detect_plateau(self.rewards, window, tol)


def _as_curriculum(curriculum):
    if isinstance(curriculum, Curriculum):
        return curriculum
    if isinstance(curriculum, JobSet):
        return Curriculum.from_jobsets([curriculum])
    return Curriculum.from_jobsets(curriculum)


def train_agent(agent, curriculum, seed=0, episodes=None, snapshot_dir=None):
    """Continue training ``agent`` for ``episodes`` episodes.

    Episode ``e`` (counted over the agent's whole life, so a resumed run
    picks up where the snapshot left off) runs jobset ``e mod len`` of the
    curriculum with simulator seed ``[seed, e]``. A snapshot is written after
    every episode when ``snapshot_dir`` is given.
    """
    plan = _as_curriculum(curriculum).episodes()
    episodes = len(plan) if episodes is None else check_positive_int(episodes, "episodes")
    reward_fn = RewardFunction.from_config(agent.config_)
    if snapshot_dir is not None:
        os.makedirs(snapshot_dir, exist_ok=True)
    start = getattr(agent, "episodes_done_", 0)
    report = TrainingReport()
    for e in range(start, start + episodes):
        phase, jobset = plan[e % len(plan)]
        eps = agent.epsilon_
        tic = time.perf_counter()
        try:
            agent.begin_episode(training=True)
            result = run_simulation(jobset, agent, agent.n_nodes,
                                    np.random.default_rng([int(seed), e]), reward_fn)
            agent.end_episode()
        except SimulationError as exc:
            raise SimulationError(str(exc), episode=e + 1) from exc
        except DRASError as exc:
            raise SimulationError(f"{type(exc).__name__}: {exc}", episode=e + 1) from exc
        agent.episodes_done_ = e + 1
        path = ""
        if snapshot_dir is not None:
            path = os.path.join(snapshot_dir, f"episode_{e + 1:04d}.model")
            agent.save(path)
        report.entries.append(EpisodeEntry(e + 1, phase, float(result.total_reward),
                                           time.perf_counter() - tic, float(eps), path))
    return report


def train(config, curriculum, n_nodes, seed=0, algorithm="pg", episodes=None,
          snapshot_dir=None):
    """Train a fresh agent; returns ``(agent, TrainingReport)``.

    Weights are initialized from ``seed`` and episode randomness derives
    from it too, so a fixed seed reproduces the report exactly.
    """
    if not isinstance(config, AgentConfig):
        raise TypeError("config must be an AgentConfig")
    agent = DRASAgent.from_config(config, algorithm, n_nodes, random_state=seed).initialize()
    report = train_agent(agent, curriculum, seed, episodes, snapshot_dir)
    agent.report_ = report
    return agent, report


def validate(model, jobset, n_nodes=None, config=None, algorithm=None, seed=0):
    """Run a frozen model over ``jobset``; returns ``(total_reward, MetricsSummary)``.

    ``model`` is a :class:`DRASAgent` or bare :class:`NetworkParams` (then
    ``n_nodes``, ``config`` and ``algorithm`` say how to drive it). A head
    that does not match the algorithm raises ConfigurationError.
    """
    if isinstance(model, NetworkParams):
        if n_nodes is None or algorithm is None:
            raise ConfigurationError("validating bare parameters needs n_nodes and algorithm")
        agent = DRASAgent.from_config(config or AgentConfig(), algorithm, n_nodes)
        agent.initialize(model)
    elif isinstance(model, DRASAgent):
        agent = model
        if algorithm is not None and agent.algorithm != algorithm:
            raise ConfigurationError(
                f"model trained as {agent.algorithm} cannot be validated as {algorithm}")
        if n_nodes is not None and n_nodes != agent.n_nodes:
            raise ConfigurationError(f"model built for N={agent.n_nodes}, not {n_nodes}")
        agent._check_params(agent.params_)
    else:
        raise TypeError("model must be a DRASAgent or NetworkParams")
    if len(jobset) == 0:
        raise EmptyTraceError("validation jobset is empty")
    result = agent.predict(jobset, seed)
    return float(result.total_reward), compute_metrics(result)


def detect_plateau(rewards, window=5, tol=0.01):
    """First 1-based episode ending a ``window`` whose rewards vary by < ``tol``.

    Variation is ``(max - min) / max(|mean|, 1e-12)``; returns None if the
    rewards never settle.
    """
    rewards = list(rewards)
    for end in range(window, len(rewards) + 1):
        w = np.asarray(rewards[end - window:end], dtype=float)
        if (w.max() - w.min()) / max(abs(w.mean()), 1e-12) < tol:
            return end
    return None
