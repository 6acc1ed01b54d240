"""Workbench for the privacy and utility of temperature-scaled text generation.

The package answers three questions about a record-additive logit model that
generates fixed-length messages through a temperature-scaled softmax:

* how much one record can change the output distribution (exact epsilons,
  worst-case bounds, hockey-stick deltas),
* which temperature best trades expected utility against privacy
  (closed-form derivative, first-order-condition solver),
* what a sampling-based estimate of the same quantities looks like
  (seeded two-arm Monte Carlo with Laplace smoothing).
"""

from .errors import (
    ArgumentError,
    ConfigError,
    EnumerationCapError,
    InputError,
    ModelEvaluationError,
    SolverError,
    WorkbenchError,
)
from .generation import (
    DEFAULT_ENUM_CAP,
    Context,
    Dataset,
    GenerationConfig,
    LabelBonusRule,
    LogitModel,
    Message,
    MessageDistribution,
    Record,
    TagTableRule,
    TokenDistribution,
    Vocabulary,
    check_enumerable,
    cumulative_logit_score,
    cumulative_logit_scores,
    derive_rng,
    enumerate_cumulative_scores,
    enumerate_message_distribution,
    message_at_index,
    message_index,
    message_log_probability,
    path_logits,
    record_influence_vector,
    sample_message,
    sample_messages,
    step_logits,
    token_distribution,
)
from .lab import (
    CellMetrics,
    LabelSpace,
    SmoothedDistribution,
    SweepResult,
    SweepRow,
    empirical_epsilon,
    estimate_cell,
    exact_smoothed_distribution,
    js_divergence,
    laplace_smooth,
    make_label_space,
    run_sweep,
    total_variation,
)
from .modelfiles import (
    RunManifest,
    file_digest,
    load_dataset,
    load_model_spec,
    save_dataset,
    save_model_spec,
)
from .privacy import (
    NeighborPair,
    PrivacyLoss,
    PrivacyReport,
    Sensitivity,
    analyze_pair,
    compose_privacy,
    hockey_stick_curve,
    hockey_stick_delta,
    logit_sensitivity,
    message_epsilon_bound,
    message_epsilon_exact,
    per_step_max_epsilons,
    temperature_floor_for_budget,
    token_epsilon_bound,
    token_epsilon_exact,
)
from .selftest import run_selftest
from .svgplot import write_sweep_svg
from .utility import (
    Candidate,
    GibbsDistribution,
    OptimizationDiagnostics,
    OptimizationProblem,
    UtilitySpec,
    expected_utility,
    gibbs_autoregressive_gap,
    gibbs_distribution,
    optimal_temperature,
    regularized_objective,
    utility_covariance,
    utility_temperature_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "Candidate",
    "CellMetrics",
    "ConfigError",
    "Context",
    "DEFAULT_ENUM_CAP",
    "Dataset",
    "EnumerationCapError",
    "GenerationConfig",
    "GibbsDistribution",
    "InputError",
    "LabelBonusRule",
    "LabelSpace",
    "LogitModel",
    "Message",
    "MessageDistribution",
    "ModelEvaluationError",
    "NeighborPair",
    "OptimizationDiagnostics",
    "OptimizationProblem",
    "PrivacyLoss",
    "PrivacyReport",
    "Record",
    "RunManifest",
    "Sensitivity",
    "SmoothedDistribution",
    "SolverError",
    "SweepResult",
    "SweepRow",
    "TagTableRule",
    "TokenDistribution",
    "UtilitySpec",
    "Vocabulary",
    "WorkbenchError",
    "analyze_pair",
    "check_enumerable",
    "compose_privacy",
    "cumulative_logit_score",
    "cumulative_logit_scores",
    "derive_rng",
    "empirical_epsilon",
    "enumerate_cumulative_scores",
    "enumerate_message_distribution",
    "estimate_cell",
    "exact_smoothed_distribution",
    "expected_utility",
    "file_digest",
    "gibbs_autoregressive_gap",
    "gibbs_distribution",
    "hockey_stick_curve",
    "hockey_stick_delta",
    "js_divergence",
    "laplace_smooth",
    "load_dataset",
    "load_model_spec",
    "logit_sensitivity",
    "make_label_space",
    "message_at_index",
    "message_epsilon_bound",
    "message_epsilon_exact",
    "message_index",
    "message_log_probability",
    "optimal_temperature",
    "path_logits",
    "per_step_max_epsilons",
    "record_influence_vector",
    "regularized_objective",
    "run_selftest",
    "run_sweep",
    "sample_message",
    "sample_messages",
    "save_dataset",
    "save_model_spec",
    "step_logits",
    "temperature_floor_for_budget",
    "token_distribution",
    "token_epsilon_bound",
    "token_epsilon_exact",
    "total_variation",
    "utility_covariance",
    "utility_temperature_derivative",
    "write_sweep_svg",
]
