"""Exception hierarchy shared by every crossmax module."""

from __future__ import annotations

__all__ = [
    "CrossmaxError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "FieldEvaluationError",
    "DimensionError",
    "SingularityError",
    "StructureError",
    "EllipticityError",
    "SolverError",
    "ConvergenceError",
    "PositivityError",
    "PreconditionError",
    "ConfigError",
]


class CrossmaxError(Exception):
    """Base class for all library errors."""


class ExprSyntaxError(CrossmaxError):
    """Malformed coefficient expression.

    Attributes
    ----------
    offset : int
        Byte offset into the source text where parsing failed.
    """

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = int(offset)
        self.text = text
        super().__init__(f"{message} at offset {self.offset}")


class UnknownIdentifierError(ExprSyntaxError):
    """Identifier that is neither a variable, constant nor function."""


class FieldEvaluationError(CrossmaxError):
    """A coefficient evaluated to a non-finite value at some grid node."""

    def __init__(self, message: str, node_index: int):
        self.node_index = int(node_index)
        super().__init__(f"{message} (node {self.node_index})")


class DimensionError(CrossmaxError, ValueError):
    """Shapes or sizes that do not agree."""


class SingularityError(CrossmaxError):
    """A matrix or block that must be invertible is singular.

    Attributes
    ----------
    block : str
        Name of the failing block, e.g. ``"alpha"``, ``"delta"`` or ``"schur"``.
    """

    def __init__(self, message: str, block: str = ""):
        self.block = block
        super().__init__(message)


class StructureError(CrossmaxError):
    """A structural clause (constancy, triangularity, sign) is violated.

    Attributes
    ----------
    clause : str
        Short name of the violated clause.
    index : int or None
        Block or row index where the violation was detected.
    measured : float or None
        Measured violation size.
    node : int or None
        Grid node where the violation is largest, when meaningful.
    """

    def __init__(self, message: str, clause: str = "", index: int | None = None,
                 measured: float | None = None, node: int | None = None):
        self.clause = clause
        self.index = index
        self.measured = measured
        self.node = node
        super().__init__(message)


class EllipticityError(CrossmaxError):
    """Diffusion matrix is not uniformly elliptic on the grid."""


class SolverError(CrossmaxError):
    """Linear solve failed or missed its residual target."""


class ConvergenceError(CrossmaxError):
    """An iteration did not converge within its budget."""


class PositivityError(CrossmaxError):
    """A vector that must be positive has entries of the wrong sign."""


class PreconditionError(CrossmaxError):
    """Parameters outside the admissible range of a construction."""


class ConfigError(CrossmaxError):
    """Configuration document is malformed or names unknown entities."""
