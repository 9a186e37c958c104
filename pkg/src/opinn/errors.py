"""Exception types shared across the package."""


class OpinnError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(OpinnError, ValueError):
    """A parameter is outside its admissible range."""


class DegenerateInputError(OpinnError, ValueError):
    """The input is structurally unusable for the requested model (e.g. an isolated node)."""


class ShapeError(OpinnError, ValueError):
    """Operand shapes are incompatible."""


class DatasetFormatError(OpinnError, ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class NonConvergenceError(OpinnError, RuntimeError):
    """An adaptive solver exhausted its substep budget."""


class DivergenceError(OpinnError, ArithmeticError):
    """A state or loss became non-finite."""
