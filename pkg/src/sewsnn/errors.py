"""Exception hierarchy shared across the package."""


class SEWError(Exception):
    """Base class for every error raised by sewsnn."""


class DimensionError(SEWError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(SEWError, ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class StaleGraphError(SEWError, RuntimeError):
    """Backward was requested on a graph that has already been consumed."""


class ParameterError(SEWError, ValueError):
    """A model or neuron parameter is outside its valid range."""


class DomainError(SEWError, ValueError):
    """Input values are outside the domain of a spike operation."""


class ConfigurationError(SEWError, ValueError):
    """A block, network or config file is inconsistently specified.

    ``key`` names the offending config field when one applies.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ArchParseError(SEWError, ValueError):
    """An architecture string could not be parsed.

    ``position`` is the 0-based character offset where parsing failed.
    """

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DivergenceError(SEWError, ArithmeticError):
    """Training produced a non-finite loss.

    ``history`` carries the epoch records completed before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DatasetError(SEWError, ValueError):
    """Base class for frame-file load errors; ``field`` names the failing field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class MagicError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class TruncationError(DatasetError):
    def __init__(self, message, expected, actual, field=None):
        super().__init__(message, field)
        self.expected = expected
        self.actual = actual


class LabelError(DatasetError):
    pass
