"""Exception types raised across the package."""


class IcevalError(Exception):
    """Base class for all package errors."""


class InvalidScheme(IcevalError, ValueError):
    """A weight scheme is missing its hyperparameter or carries the wrong one."""


class SupportViolation(IcevalError):
    """The logging policy does not cover an action the target policy can take."""


class InvalidWorld(IcevalError, ValueError):
    """An enumerable world failed validation."""


class MissingLoggingRow(IcevalError, ValueError):
    """A scheme needs the full logging distribution but only the logged propensity is present."""


class EmptyData(IcevalError, ValueError):
    """An estimator was called on an empty log."""


class NonDifferentiableScheme(IcevalError, ValueError):
    """Gradient requested for a scheme whose weights are discontinuous in the policy."""


class NonFiniteObjective(IcevalError, FloatingPointError):
    """The learning objective became non-finite.

    ``record`` holds the index of the first offending log record, or -1 when it
    could not be attributed to a record.
    """

    def __init__(self, message, record=-1):
        super().__init__(message)
        self.record = record


class NotIdentifiableInLTR(IcevalError, ValueError):
    """Schemes with a control-variate term cannot be computed from click logs."""


class InvalidCoefficient(IcevalError, ValueError):
    """A rank-learning coefficient is negative, so the hinge bound does not hold."""


class SupportWarning(UserWarning):
    """Target policy puts mass on actions with zero logging propensity."""
