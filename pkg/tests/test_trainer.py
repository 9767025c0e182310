import numpy as np
import pytest
from conftest import random_jobset

from dras.agent import AgentConfig, DRASAgent, RewardFunction
from dras.exceptions import ConfigurationError, EmptyTraceError, SimulationError
from dras.fixtures import DESK_NODES, golden_jobset, load_bundled
from dras.metrics import compute_metrics
from dras.neuralnet import init_params, load_model
from dras.policies import FCFSEasy, RandomPolicy
from dras.simcore import run_simulation
from dras.trainer import (
    Curriculum,
    TrainingReport,
    build_curriculum,
    detect_plateau,
    real_slices,
    train,
    train_agent,
    validate,
)
from dras.workload import Job, JobSet

DESK = AgentConfig(window=10, hidden1=256, hidden2=64, time_scale=43200.0)
TINY = AgentConfig(window=4, hidden1=8, hidden2=4, time_scale=7200.0)


@pytest.fixture(scope="module")
def desk_train():
    return load_bundled("desk_train.swf")


@pytest.fixture(scope="module")
def desk_validation():
    return load_bundled("desk_validation.swf")


def tiny_curriculum(n=3, seed=0):
    return Curriculum.from_jobsets([random_jobset(seed + i, n_jobs=25, n_nodes=16)
                                    for i in range(n)])


def test_full_scale_counts(desk_train):
    cur = build_curriculum(desk_train, (9, 9, 82), jobs_per_set=20, seed=0)
    assert len(cur) == 100
    assert [(p, len(s)) for p, s in cur.phases] == [("sampled", 9), ("real", 9),
                                                     ("synthetic", 82)]
    one = build_curriculum(desk_train, (1, 0, 0), jobs_per_set=20)
    assert [p for p, _ in one.episodes()] == ["sampled"]


def test_desk_curriculum(desk_train):
    cur = build_curriculum(desk_train, (3, 3, 6), jobs_per_set=200, seed=0)
    phases = [p for p, _ in cur.episodes()]
    assert phases == ["sampled"] * 3 + ["real"] * 3 + ["synthetic"] * 6
    assert sum(len(js) for _, js in cur.episodes() if _ == "real") == len(desk_train)
    again = build_curriculum(desk_train, (3, 3, 6), jobs_per_set=200, seed=0)
    assert all(a.jobs == b.jobs for (_, a), (_, b) in zip(cur.episodes(), again.episodes()))
    other = build_curriculum(desk_train, (3, 3, 6), jobs_per_set=200, seed=1)
    assert cur.episodes()[0][1].jobs != other.episodes()[0][1].jobs


def test_curriculum_errors(desk_train):
    with pytest.raises(ConfigurationError, match="empty curriculum"):
        build_curriculum(desk_train, (0, 0, 0))
    with pytest.raises(ConfigurationError):
        build_curriculum(desk_train, (1, -1, 0))
    with pytest.raises(ConfigurationError):
        real_slices(desk_train, len(desk_train) + 1)
    with pytest.raises(EmptyTraceError):
        build_curriculum(JobSet(()), (1, 0, 0))
    with pytest.raises(ConfigurationError, match="empty curriculum"):
        Curriculum([("real", [])])


def test_real_slices_cover_equal_spans(desk_train):
    parts = real_slices(desk_train, 3)
    assert sum(len(p) for p in parts) == len(desk_train)
    # two bursts far apart leave the middle slice empty
    bursts = JobSet(tuple(Job(i + 1, float(t), 10, 10, 1) for i, t in enumerate([0, 1, 2, 900])))
    with pytest.raises(ConfigurationError, match="holds no jobs"):
        real_slices(bursts, 3)


def test_zero_lr_snapshots_match_initialization(tmp_path):
    cfg = AgentConfig(window=4, hidden1=8, hidden2=4, learning_rate=0.0, update_every=2)
    agent, report = train(cfg, tiny_curriculum(), 16, seed=3, snapshot_dir=tmp_path)
    init = init_params(2 * 4 + 16, 8, 4, 4, seed=3)
    assert len(report.entries) == 3
    for e in report.entries:
        params, _ = load_model(e.snapshot_path)
        assert params.equals(init)
    assert agent.params_.equals(init)


@pytest.mark.parametrize("algorithm", ["pg", "dql", "noreserve"])
def test_fixed_seed_reproduces_report(algorithm):
    cur = tiny_curriculum()
    _, a = train(TINY, cur, 16, seed=5, algorithm=algorithm, episodes=4)
    _, b = train(TINY, cur, 16, seed=5, algorithm=algorithm, episodes=4)
    assert a.to_csv() == b.to_csv()
    assert [e.episode for e in a.entries] == [1, 2, 3, 4]
    assert a.entries[3].phase == "real"


def test_report_phases_in_order():
    cur = Curriculum([("sampled", [random_jobset(1, 20, 16)]),
                      ("real", [random_jobset(2, 20, 16)] * 2),
                      ("synthetic", [random_jobset(3, 20, 16)])])
    _, report = train(TINY, cur, 16, seed=0)
    assert report.phase_boundaries() == [("sampled", 1, 1), ("real", 2, 3),
                                         ("synthetic", 4, 4)]
    assert report.to_csv().splitlines()[0] == "episode,phase,total_reward,epsilon,snapshot_path"
    assert all(e.wall_time >= 0 for e in report.entries)


def test_dql_epsilon_decays_across_episodes():
    _, report = train(TINY, tiny_curriculum(), 16, seed=0, algorithm="dql", episodes=3)
    eps = [e.epsilon for e in report.entries]
    assert eps[0] == 1.0 and eps[0] > eps[1] > eps[2]


def test_resume_is_bit_exact(tmp_path):
    cur = tiny_curriculum()
    straight, full = train(TINY, cur, 16, seed=2, episodes=5)
    _, first = train(TINY, cur, 16, seed=2, episodes=2, snapshot_dir=tmp_path)
    resumed = DRASAgent.from_config(TINY, "pg", 16).load(first.entries[-1].snapshot_path)
    assert resumed.episodes_done_ == 2
    rest = train_agent(resumed, cur, seed=2, episodes=3)
    assert [e.episode for e in rest.entries] == [3, 4, 5]
    assert first.rewards + rest.rewards == full.rewards
    assert resumed.params_.equals(straight.params_)


def test_simulation_errors_carry_episode():
    too_big = random_jobset(0, n_jobs=10, n_nodes=64)
    cur = Curriculum.from_jobsets([random_jobset(1, 10, 16), too_big])
    with pytest.raises(SimulationError) as info:
        train(TINY, cur, 16, seed=0)
    assert info.value.episode == 2


def test_validate_is_deterministic_and_frozen():
    agent, _ = train(TINY, tiny_curriculum(), 16, seed=1, episodes=2)
    js = random_jobset(9, n_jobs=40, n_nodes=16)
    before = agent.params_.copy()
    a = validate(agent, js)
    b = validate(agent, js)
    assert a == b and agent.params_.equals(before)
    bare = validate(agent.params_, js, n_nodes=16, config=TINY, algorithm="pg")
    assert bare == a


def test_validate_head_mismatch():
    agent, _ = train(TINY, tiny_curriculum(1), 16, seed=1, algorithm="dql")
    js = random_jobset(9, n_jobs=10, n_nodes=16)
    with pytest.raises(ConfigurationError):
        validate(agent.params_, js, n_nodes=16, config=TINY, algorithm="pg")
    with pytest.raises(ConfigurationError):
        validate(agent, js, algorithm="pg")
    with pytest.raises(ConfigurationError):
        validate(agent, js, n_nodes=32)
    with pytest.raises(EmptyTraceError):
        validate(agent, JobSet(()))


def test_validate_position0_model_equals_fcfs():
    golden = golden_jobset()
    cfg = AgentConfig(window=4, hidden1=3, hidden2=2)
    params = init_params(2 * 4 + 4, 3, 2, 4, seed=0)
    # all weights zero except a bias that favours slot 0
    for block in params.blocks().values():
        block[...] = 0.0
    params.out_b[0] = 10.0
    _, summary = validate(params, golden, n_nodes=4, config=cfg, algorithm="pg")
    assert summary == compute_metrics(run_simulation(golden, FCFSEasy(), 4))


def test_desk_learning_progress(desk_train, desk_validation):
    """One-seed version of the acceptance check."""
    cur = build_curriculum(desk_train, (3, 3, 6), jobs_per_set=200, seed=0)
    agent, report = train(DESK, cur, DESK_NODES, seed=0, episodes=30)
    assert len(report.entries) == 30
    reward_fn = RewardFunction.from_config(DESK)
    random_mean = np.mean([run_simulation(desk_validation, RandomPolicy(), DESK_NODES, seed=s,
                                          reward_fn=reward_fn).total_reward for s in range(5)])
    assert validate(agent, desk_validation)[0] > random_mean


def test_detect_plateau():
    assert detect_plateau([1, 2, 3, 10, 10, 10, 10, 10]) == 8
    assert detect_plateau([1, 2, 3, 4, 5, 6]) is None
    assert detect_plateau([5.0] * 5) == 5
    assert detect_plateau([1, 1]) is None
    assert TrainingReport().plateau() is None
