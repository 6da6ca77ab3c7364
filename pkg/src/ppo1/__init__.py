"""Single-step proximal policy optimization (PPO-1) for open-loop control.

Each episode draws one action per environment from a Gaussian policy whose
input is a constant state, evaluates the rewards, and takes clipped
surrogate steps with the whitened rewards as advantages.
"""

from .envs import (
    ActionSpec, DimensionMap, Environment, FunctionEnvironment, clip_raw, evaluate_with_fallback,
    map_action, unmap_action,
)
from .estimator import SingleStepPPO
from .exceptions import (
    ConfigError, DimensionError, DivergedUpdateError, EvaluationError, InfeasibleActionError,
    InsufficientHistoryError, OracleBudgetError, PPO1Error, ProtocolError,
)
from .policy import ClipConfig, DiagGaussianPolicy, clipped_objective, log_prob, ratio, surrogate_loss_and_grad
from .surrogates import BUILTIN_SURROGATES, SurrogateEnv, grid_oracle, make_surrogate
from .trainer import RunHistory, Trainer, TrainerConfig, report_optimum, train, whiten

__version__ = "0.1.0"

__all__ = [
    "ActionSpec", "BUILTIN_SURROGATES", "ClipConfig", "ConfigError", "DiagGaussianPolicy",
    "DimensionError", "DimensionMap", "DivergedUpdateError", "Environment", "EvaluationError",
    "FunctionEnvironment", "InfeasibleActionError", "InsufficientHistoryError", "OracleBudgetError",
    "PPO1Error", "ProtocolError", "RunHistory", "SingleStepPPO", "SurrogateEnv", "Trainer",
    "TrainerConfig", "clip_raw", "clipped_objective", "evaluate_with_fallback", "grid_oracle",
    "log_prob", "make_surrogate", "map_action", "ratio", "report_optimum", "surrogate_loss_and_grad",
    "train", "unmap_action", "whiten",
]
