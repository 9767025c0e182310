"""Flat ``key = value`` run configuration and the bundled system profiles."""

import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources

from .agent import AgentConfig
from .exceptions import ConfigurationError

PROFILES = ("desk", "theta", "cori")
BUNDLED_PREFIX = "bundled:"


def parse_config_text(text, source="<config>"):
    """``key = value`` lines; '#' starts a comment. Later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        out[key] = value
    return out


def profile_text(name):
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    return resources.files("dras").joinpath("profiles").joinpath(f"{name}.conf").read_text()


def resolve_path(value):
    """Map ``bundled:NAME`` to the packaged data file; other paths unchanged."""
    if value and value.startswith(BUNDLED_PREFIX):
        return str(resources.files("dras").joinpath("data").joinpath(value[len(BUNDLED_PREFIX):]))
    return value


def _to_bool(v):
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _opt_float(v):
    return None if v.lower() in ("", "none") else float(v)


def _opt_int(v):
    return None if v.lower() in ("", "none") else int(v)


@dataclass
class RunConfig:
    # system
    n_nodes: int = 64
    max_runtime: float = 43200.0
    min_size: int = 0
    high_priority_queue: int | None = None
    hide_dependent: bool = True
    # agent
    algorithm: str = "pg"
    window: int = 10
    reward_kind: str = "capability"
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    gamma: float = 1.0
    learning_rate: float = 0.001
    update_every: int = 10
    epsilon0: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    time_scale: float | None = None  # None: max_runtime
    size_scale: float | None = None
    hidden1: int = 256
    hidden2: int = 64
    # curriculum and training
    n_sampled: int = 3
    n_real: int = 3
    n_synthetic: int = 6
    jobs_per_set: int = 200
    episodes: int | None = None
    # evaluation
    size_buckets: tuple = ()
    # paths
    trace: str = ""
    validation_trace: str = ""
    jobsets_dir: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict, repr=False)

    PARSERS = {
        "n_nodes": int, "max_runtime": float, "min_size": int,
        "high_priority_queue": _opt_int, "hide_dependent": _to_bool,
        "algorithm": str, "window": int, "reward_kind": str, "weights": _floats,
        "gamma": float, "learning_rate": float, "update_every": int, "epsilon0": float,
        "epsilon_decay": float, "epsilon_min": float, "time_scale": _opt_float,
        "size_scale": _opt_float, "hidden1": int, "hidden2": int, "n_sampled": int,
        "n_real": int, "n_synthetic": int, "jobs_per_set": int, "episodes": _opt_int,
        "size_buckets": _floats, "trace": resolve_path, "validation_trace": resolve_path,
        "jobsets_dir": str, "seed": _opt_int,
    }

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values; ``profile = NAME`` pulls in a bundled profile first."""
        mapping = dict(mapping)
        base = {}
        if "profile" in mapping:
            base = parse_config_text(profile_text(mapping.pop("profile")))
        base.update(mapping)
        kwargs = {}
        for key, value in base.items():
            if key not in cls.PARSERS:
                raise ConfigurationError(f"unknown config key {key!r}")
            try:
                kwargs[key] = cls.PARSERS[key](value)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {exc}") from None
        cfg = cls(**kwargs)
        cfg.agent_config()  # validate early
        return cfg

    @classmethod
    def from_file(cls, path):
        if path is None:
            return cls.from_mapping({"profile": "desk"})
        if not os.path.exists(path) and path in PROFILES:
            return cls.from_mapping({"profile": path})
        with open(path) as fh:
            return cls.from_mapping(parse_config_text(fh.read(), path))

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    @property
    def counts(self):
        return (self.n_sampled, self.n_real, self.n_synthetic)

    def agent_config(self):
        return AgentConfig(
            window=self.window, reward_kind=self.reward_kind, weights=tuple(self.weights),
            gamma=self.gamma, learning_rate=self.learning_rate,
            update_every=self.update_every, epsilon0=self.epsilon0,
            epsilon_decay=self.epsilon_decay, epsilon_min=self.epsilon_min,
            time_scale=self.time_scale or self.max_runtime, size_scale=self.size_scale,
            hidden1=self.hidden1, hidden2=self.hidden2)

    def require_seed(self):
        if self.seed is None:
            raise ConfigurationError("a seed is required (config key 'seed' or --seed)")
        return self.seed

    def to_text(self):
        lines = []
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"
