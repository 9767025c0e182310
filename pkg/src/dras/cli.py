"""``dras`` command line: inspect, gen, simulate, train, evaluate."""

import argparse
import glob
import os
import re
import sys

from . import metrics
from .agent import ALGORITHMS, DRASAgent, RewardFunction
from .config import RunConfig, resolve_path
from .exceptions import ConfigurationError, DRASError
from .policies import BASELINES
from .simcore import run_simulation
from .trainer import Curriculum, build_curriculum, train_agent, validate
from .workload import compute_stats, filter_jobs, parse_swf, write_swf

AGENT_POLICIES = {"dras-pg": "pg", "dras-dql": "dql", "rl-noreserve": "noreserve"}
POLICY_NAMES = tuple(BASELINES) + tuple(AGENT_POLICIES)
PHASE_NUMBERS = {"sampled": 1, "real": 2, "synthetic": 3}


class UsageError(DRASError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def load_config(args):
    cfg = RunConfig.from_file(args.config)
    return cfg.with_overrides(seed=args.seed)


def load_trace(path, cfg, what="trace"):
    if not path:
        raise ConfigurationError(f"no {what} given (use --trace or the config key)")
    jobs = parse_swf(resolve_path(path), high_priority_queue=cfg.high_priority_queue)
    return filter_jobs(jobs, cfg.min_size, cfg.hide_dependent)


def make_agent(cfg, algorithm, seed=0):
    return DRASAgent.from_config(cfg.agent_config(), algorithm, cfg.n_nodes, random_state=seed)


def build_policy(name, cfg, model=None):
    if name in BASELINES:
        if name == "optimization":
            return BASELINES[name](objective=cfg.reward_kind, weights=tuple(cfg.weights))
        return BASELINES[name]()
    if name in AGENT_POLICIES:
        if not model:
            raise UsageError(f"policy {name} needs --model")
        return make_agent(cfg, AGENT_POLICIES[name]).load(model)
    raise UsageError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


def _reward_fn(cfg):
    return RewardFunction.from_config(cfg.agent_config())


def _policy_list(args):
    names = [n.strip() for n in (args.policy or "").split(",") if n.strip()]
    models = [m.strip() for m in (args.model or "").split(",") if m.strip()]
    agent_names = [n for n in names if n in AGENT_POLICIES]
    if agent_names and len(models) not in (1, len(agent_names)):
        raise UsageError("give one --model, or one per learning policy in --policy order")
    pairs, k = [], 0
    for n in names:
        model = None
        if n in AGENT_POLICIES and models:
            model = models[k] if len(models) > 1 else models[0]
            k += 1
        pairs.append((n, model))
    return pairs


# -- commands ------------------------------------------------------------
def cmd_inspect(args):
    cfg = load_config(args)
    trace = load_trace(args.trace or cfg.trace, cfg)
    text = compute_stats(trace).to_csv()
    if args.out:
        _write(_out_dir(args), "stats.csv", text)
    else:
        sys.stdout.write(text)


def _curriculum(cfg, trace_path):
    seed = cfg.require_seed()
    trace = load_trace(trace_path or cfg.trace, cfg, "training trace")
    return build_curriculum(trace, cfg.counts, cfg.jobs_per_set, seed)


def cmd_gen(args):
    cfg = load_config(args)
    if sum(cfg.counts) == 0:
        raise ConfigurationError("empty curriculum")
    cur = _curriculum(cfg, args.trace)
    out = _out_dir(args)
    for phase, jobsets in cur.phases:
        for i, js in enumerate(jobsets, start=1):
            name = f"phase{PHASE_NUMBERS[phase]}_{i}.swf"
            with open(os.path.join(out, name), "w") as fh:
                write_swf(js, fh, high_priority_queue=cfg.high_priority_queue or 1)
            print(os.path.join(out, name))


def _read_jobsets_dir(path, cfg):
    found = []
    for f in glob.glob(os.path.join(path, "phase*_*.swf")):
        m = re.match(r"phase([123])_(\d+)\.swf$", os.path.basename(f))
        if m:
            found.append((int(m.group(1)), int(m.group(2)), f))
    if not found:
        raise ConfigurationError(f"no phase<k>_<i>.swf files in {path}")
    by_phase = {1: [], 2: [], 3: []}
    for k, _, f in sorted(found):
        by_phase[k].append(parse_swf(f, high_priority_queue=cfg.high_priority_queue))
    names = {v: k for k, v in PHASE_NUMBERS.items()}
    return Curriculum([(names[k], by_phase[k]) for k in (1, 2, 3)])


def cmd_simulate(args):
    cfg = load_config(args)
    pairs = _policy_list(args)
    if len(pairs) != 1:
        raise UsageError("simulate takes exactly one --policy")
    name, model = pairs[0]
    policy = build_policy(name, cfg, model)
    trace = load_trace(args.trace or cfg.trace, cfg)
    result = run_simulation(trace, policy, cfg.n_nodes, cfg.require_seed(), _reward_fn(cfg))
    out = _out_dir(args)
    summary = metrics.compute_metrics(result, cfg.n_nodes)
    _write(out, "result.csv", result.jobs_csv())
    _write(out, "instances.csv", result.instances_csv())
    _write(out, "summary.csv", metrics.summary_csv({name: summary}))


def cmd_train(args):
    cfg = load_config(args)
    seed = cfg.require_seed()
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.jobsets_dir and os.path.isdir(cfg.jobsets_dir):
        cur = _read_jobsets_dir(cfg.jobsets_dir, cfg)
    else:
        if sum(cfg.counts) == 0:
            raise ConfigurationError("empty curriculum")
        cur = _curriculum(cfg, args.trace)
    agent = make_agent(cfg, cfg.algorithm, seed)
    if args.model:
        agent.load(args.model)
    else:
        agent.initialize()
    out = _out_dir(args)
    snap_dir = os.path.join(out, "snapshots")
    report = train_agent(agent, cur, seed=seed, episodes=cfg.episodes, snapshot_dir=snap_dir)
    agent.save(os.path.join(out, "model.bin"))
    _write(out, "training.csv", report.to_csv())
    if cfg.validation_trace:
        val = load_trace(cfg.validation_trace, cfg, "validation trace")
        lines = ["episode,total_reward"]
        for e in report.entries:
            snap = make_agent(cfg, cfg.algorithm).load(e.snapshot_path)
            lines.append(f"{e.episode},{validate(snap, val, seed=seed)[0]!r}")
        _write(out, "validation.csv", "\n".join(lines) + "\n")


def cmd_evaluate(args):
    cfg = load_config(args)
    pairs = _policy_list(args)
    if len(pairs) < 2:
        raise UsageError("evaluate needs at least two policies")
    if len({n for n, _ in pairs}) != len(pairs):
        raise UsageError("policy names must be distinct")
    seed = cfg.require_seed()
    trace = load_trace(args.trace or cfg.trace, cfg)
    results, summaries = {}, {}
    for name, model in pairs:
        policy = build_policy(name, cfg, model)
        results[name] = run_simulation(trace, policy, cfg.n_nodes, seed, _reward_fn(cfg))
        summaries[name] = metrics.compute_metrics(results[name], cfg.n_nodes)
    out = _out_dir(args)
    _write(out, "summary.csv", metrics.summary_csv(summaries))
    _write(out, "waits.csv", metrics.waits_csv(results))
    _write(out, "kiviat.csv", metrics.kiviat_csv(metrics.kiviat_normalize(summaries)))
    _write(out, "modes.csv", metrics.mode_shares_csv(summaries))
    _write(out, "wait_distribution.csv", _distribution_csv(results, cfg.size_buckets))
    _write(out, "rewards.csv", "policy,total_reward\n" + "".join(
        f"{n},{r.total_reward!r}\n" for n, r in results.items()))


def _distribution_csv(results, buckets):
    lines = ["policy,bucket,mode,count,min,median,max"]
    for name, res in results.items():
        for row in metrics.wait_distribution(res, buckets):
            lines.append(f"{name},{row['bucket']},{row['mode']},{row['count']},"
                         f"{row['min']!r},{row['median']!r},{row['max']!r}")
    return "\n".join(lines) + "\n"


COMMANDS = {
    "inspect": (cmd_inspect, "print workload statistics of a trace as CSV"),
    "gen": (cmd_gen, "write the training curriculum as phase<k>_<i>.swf files"),
    "simulate": (cmd_simulate, "run one policy over a trace"),
    "train": (cmd_train, "train a learning agent over the curriculum"),
    "evaluate": (cmd_evaluate, "compare two or more policies on one trace"),
}


def build_parser():
    parser = _Parser(prog="dras", description="Trace-driven HPC scheduling with RL agents.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file or profile name")
        p.add_argument("--trace", help="SWF trace (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        if name in ("simulate", "evaluate"):
            p.add_argument("--policy", required=True,
                           help="policy name(s), comma separated: " + ", ".join(POLICY_NAMES))
        if name in ("simulate", "evaluate", "train"):
            p.add_argument("--model", help="model file(s); for train, a snapshot to resume")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command][0](args)
    except (DRASError, OSError, ValueError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"dras: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
