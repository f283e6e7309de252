"""Exception types shared across the package."""


class AnswerSelectError(Exception):
    """Base class for all package errors."""


class DimensionError(AnswerSelectError, ValueError):
    """Operand shapes disagree."""


class DegenerateInputError(AnswerSelectError, ValueError):
    """A window or kernel does not fit inside its input."""


class ConfigError(AnswerSelectError, ValueError):
    """Invalid configuration or hyper-parameter."""


class StateError(AnswerSelectError, RuntimeError):
    """An operation was called in the wrong order."""


class ParseError(AnswerSelectError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class UndefinedMetricError(AnswerSelectError, ValueError):
    """A ranking metric was requested for a question without positives."""


class NumericalError(AnswerSelectError, FloatingPointError):
    """Non-finite values appeared during training."""
