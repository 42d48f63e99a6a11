"""Exception hierarchy.

Errors that come from bad user input (files, schemas, variable names)
derive from :class:`InputError`; errors raised while fitting or evaluating
a model derive from :class:`ModelError`. The CLI maps them to exit codes
2 and 1 respectively.
"""


class LogMeanError(Exception):
    """Base class for all package errors."""


class InputError(LogMeanError, ValueError):
    """Malformed or inconsistent input."""


class ParseError(InputError):
    """A data or model file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(InputError):
    """Unknown or duplicated column / variable name."""


class DomainError(InputError):
    """An argument lies outside the domain of the operation."""


class CapacityError(InputError):
    """Too many variables for dense subset enumeration."""


class InvalidDistributionError(InputError):
    """Cell probabilities are negative or do not sum to one."""


class ZeroBaseError(InputError):
    """Conditioning stratum has no observations."""


class ModelError(LogMeanError):
    """Failure while fitting or evaluating a model."""


class IncoherentMarginsError(ModelError, ValueError):
    """Margin probabilities do not define a probability distribution.

    In the log-mean parameterization this signals a parameter point
    outside the model's (variation dependent) parameter space.
    """


class InvalidParamsError(ModelError, ValueError):
    """Parameters imply probabilities outside (0, 1)."""


class LogDomainError(ModelError, ValueError):
    """A margin probability is zero, so its logarithm is undefined."""


class ConvergenceError(ModelError):
    """The optimizer stopped before meeting its convergence criteria.

    The last iterate is kept on ``last`` for inspection.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SingularInformationError(ModelError):
    """Observed information matrix is singular at the reported optimum."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction
