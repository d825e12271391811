"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
at module boundaries is part of the contract.
"""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class FormatError(ValueError):
    """A serialized artifact (tensor container, flow file, image, CSV) is malformed."""


class ResourceLimitError(RuntimeError):
    """An operation would exceed a configured size or memory cap."""


class DomainError(ValueError):
    """Inputs are structurally valid but outside an operation's domain."""


class EvaluationError(ArithmeticError):
    """A user-supplied callable produced a non-finite value."""
