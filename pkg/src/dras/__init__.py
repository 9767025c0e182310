"""Trace-driven HPC batch scheduling simulator with reservation-aware
reinforcement learning agents and classical baselines."""

from .agent import AgentConfig, DRASAgent, RewardFunction, schedule_instance
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    DRASError,
    EmptyTraceError,
    FormatError,
    NumericError,
    ParseError,
    ShapeError,
    SimulationError,
)
from .metrics import MetricsSummary, compute_metrics, kiviat_normalize, wait_distribution
from .policies import BinPacking, FCFSEasy, Optimization, RandomPolicy, knapsack_dp
from .simcore import Mode, SimulationResult, run_simulation
from .trainer import Curriculum, TrainingReport, build_curriculum, train, validate
from .workload import (
    Job,
    JobSet,
    WorkloadModel,
    WorkloadStats,
    compute_stats,
    filter_jobs,
    parse_swf,
    sample_jobset,
    split_jobset,
    synthesize_jobset,
    write_swf,
)

__version__ = "0.1.0"
