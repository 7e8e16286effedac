"""Self-tuning random walk Metropolis: trial-stage step-size selection by fixed-slope logistic regression."""

from .analytic import (
    arctan_acceptance,
    closed_form_step,
    empirical_slope,
    integral_acceptance,
    logit,
    logit_inverse,
    logit_linearization,
)
from .model import (
    ParameterState,
    RandomSource,
    ScaleType,
    StructureError,
    TargetModel,
    draw_normal,
    draw_uniform,
    linear,
    log_density,
    positive,
    probability,
)
from .proposals import (
    AddCommonPerturber,
    ProposalOutcome,
    add_common_perturb,
    propose_linear,
    propose_log,
    propose_logit,
    sum_to_one_logit_perturb,
)
from .sampler import (
    BlockUpdate,
    ChainTrace,
    InvalidStateError,
    ParameterUpdate,
    Sampler,
    SimplexUpdate,
    accept_reject,
    run_chain,
    run_update,
)
from .tuner import (
    FIXED_SLOPE,
    AcceptanceRecord,
    DegenerateDesignError,
    InvalidFitError,
    LogisticFit,
    SlopePrior,
    TrialDesign,
    UpdateTuner,
    fit_fixed_slope,
    fit_full,
    recommend_step,
    run_trial_stage,
    trial_grid,
    tune_update,
)

__version__ = "0.1.0"
