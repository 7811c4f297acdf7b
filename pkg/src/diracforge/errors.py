"""Exception hierarchy for the engine.

Every stage raises a subclass of EngineError so the CLI can map failures
to a diagnostic category and a nonzero exit status.
"""


class EngineError(Exception):
    """Base class for all engine failures."""

    category = "engine"


class IndexUsageError(EngineError):
    """An index occurs more than twice in a monomial, or paired slots disagree in kind."""

    category = "index"


class UnknownAtomError(EngineError):
    """An operation referenced an atom that is not in the model's symbol table."""

    category = "unknown-atom"


class MissingSampleError(EngineError):
    """Numeric evaluation hit an atom component with no assigned sample value."""

    category = "numeric"


class UnsupportedDeltaOrderError(EngineError):
    """A bracket produced more than two derivatives on the delta function."""

    category = "delta-order"


class ParseError(EngineError):
    """Syntax error in a model file or expression string."""

    category = "parse"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, col {column}: {message}"
        super().__init__(message)


class ValidationError(EngineError):
    """A parsed model is structurally invalid (undeclared atom, non-scalar Lagrangian, ...)."""

    category = "validation"


class SecondOrderTimeError(EngineError):
    """The 3+1 split produced a second time derivative."""

    category = "second-order-time"


class VelocityResidueError(EngineError):
    """A velocity survived Legendre elimination; signals a bookkeeping bug."""

    category = "legendre"


class RankUnstableError(EngineError):
    """Numeric Hessian ranks disagreed across samples."""

    category = "rank"


class InconsistentTheoryError(EngineError):
    """A consistency condition reduced to a nonzero constant."""

    category = "inconsistent-theory"


class NonLinearMultiplierError(EngineError):
    """A consistency condition is not solvable as a linear equation in the multipliers."""

    category = "multiplier"


class ClassificationIncompleteError(EngineError):
    """The null-vector ansatz found fewer first-class combinations than the numeric rank demands."""

    category = "classification"


class DofCountError(EngineError):
    """Degree-of-freedom counting produced a negative or non-integer result."""

    category = "dof"
