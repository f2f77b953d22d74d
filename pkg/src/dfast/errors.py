"""Exception types shared across the package."""


class DFastError(Exception):
    """Base class for all package errors."""


class DimensionError(DFastError, ValueError):
    """Operand shapes do not conform."""


class NumericError(DFastError, ArithmeticError):
    """A computation produced NaN/Inf or hit a degenerate value."""


class ContractError(DFastError, ValueError):
    """A precondition of an operation was violated."""


class SchemaError(DFastError, ValueError):
    """Input data does not match the expected layout."""


class FormatError(DFastError, ValueError):
    """A binary container or checkpoint is malformed."""
