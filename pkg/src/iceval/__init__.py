"""Counterfactual evaluation and learning with interpolated estimators."""
from .errors import (
    EmptyData,
    InvalidCoefficient,
    InvalidScheme,
    InvalidWorld,
    MissingLoggingRow,
    NonDifferentiableScheme,
    NonFiniteObjective,
    NotIdentifiableInLTR,
    SupportViolation,
    SupportWarning,
)
from .estimators import (
    KINDS,
    LoggedData,
    LoggedInteraction,
    WeightScheme,
    evaluate,
    evaluate_gradient,
    weights,
)
from .policy import FlooredPolicy, SoftmaxLinearPolicy, TabularPolicy
from .world import (
    EnumerableWorld,
    exact_bias,
    exact_bias_cab,
    exact_bias_cabdr,
    exact_variance,
    exact_variance_cab,
    exact_variance_cabdr,
    load_world,
    true_value,
)

__version__ = "0.1.0"
