"""Exception hierarchy shared across the toolkit.

Every error the package raises on bad input derives from :class:`MbaError`,
so callers (notably the CLI) can distinguish domain failures from bugs.
"""


class MbaError(Exception):
    """Base class for all mbakit domain errors."""


class MbaSyntaxError(MbaError):
    """Raised when an expression string does not parse.

    ``offset`` is the 0-based byte offset of the offending position.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class UnboundVariableError(MbaError):
    """Raised when evaluation meets a variable with no binding."""

    def __init__(self, name: str):
        super().__init__(f"unbound variable: {name}")
        self.name = name


class TooManyVariablesError(MbaError):
    """Raised when a truth table would need more variables than allowed."""


class RuleVerificationError(MbaError):
    """Raised at load time when a rewrite rule fails the equivalence oracle."""


class DatasetFormatError(MbaError):
    """Raised for malformed dataset files; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ShapeError(MbaError):
    """Raised for tensor shape mismatches, naming the operation involved."""


class CheckpointError(MbaError):
    """Raised when a checkpoint file cannot be read or is corrupt."""


class TrainingDivergedError(MbaError):
    """Raised when the training loss becomes non-finite."""
