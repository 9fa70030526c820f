"""recbandit: counterfactual learning from logged bandit feedback.

Simulates a recommender environment with organic sessions and
propensity-logged recommendations, trains policies with six objectives
(likelihood, IPS likelihood, contextual bandit, dual bandit, POEM, SNIPS),
and benchmarks them via simulated A/B tests and off-policy estimators.
"""

from .core import (
    Action,
    BanditEvent,
    Context,
    InteractionLog,
    LogFormatError,
    OrganicEvent,
    context_from_history,
    read_log,
    write_log,
)
from .harness import ExperimentSpec, ResultRow, confidence_interval, emit_results, run_experiment
from .objectives import ObjectiveConfig, TrainingSet, train
from .ope import OpeReport, ips_estimate, snips_estimate
from .optim import LbfgsConfig, MinimizeResult, finite_difference_gradient, minimize
from .policies import (
    CtrModelPolicy,
    LinearSoftmaxPolicy,
    Policy,
    PopularityPolicy,
    UniformPolicy,
    load_policy,
    save_policy,
)
from .sim import (
    AbTestResult,
    Environment,
    OraclePolicy,
    SimConfig,
    ab_test,
    generate_logs,
    init_environment,
    simulate_user,
    true_ctr,
)

__version__ = "0.1.0"
