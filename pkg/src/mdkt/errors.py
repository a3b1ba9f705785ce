"""Exception hierarchy shared by every module of the package."""


class MDKTError(Exception):
    """Base class for all package errors."""


class ShapeError(MDKTError, ValueError):
    """Tensor extents do not agree with what an operation needs."""


class ParameterError(MDKTError, ValueError):
    """A scalar hyperparameter is outside its valid range."""


class DomainError(MDKTError, ValueError):
    """Input values fall outside an operation's mathematical domain."""


class NumericError(MDKTError, ArithmeticError):
    """A NaN or infinity was produced."""


class UsageError(MDKTError, RuntimeError):
    """An API was called in a way its contract forbids."""


class LabelError(MDKTError, ValueError):
    """Class label outside ``[0, n_classes)``."""


class MiningError(MDKTError, ValueError):
    """Batch-hard mining cannot find a positive or negative for some anchor."""


class SamplingError(MDKTError, ValueError):
    """The dataset cannot satisfy a batch request."""


class ConfigError(MDKTError, ValueError):
    """Invalid configuration. ``field`` names the offending entry when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FormatError(MDKTError, ValueError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class OptimizerError(MDKTError, ValueError):
    pass


class DivergenceError(MDKTError, ArithmeticError):
    """Training produced a non-finite loss; ``step`` is the global step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UndefinedMetricError(MDKTError, ValueError):
    """Every query was skipped, so the metric has no value."""
