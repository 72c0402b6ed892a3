"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class CarevecError(Exception):
    """Base class for all package errors."""


class DataError(CarevecError):
    """Malformed input data, contract violations, or mismatched artifacts."""


class NumericalError(CarevecError):
    """Non-finite loss or other numerical breakdown during optimization."""


class CheckpointError(DataError):
    """Base class for checkpoint file problems."""


class CheckpointVersionError(CheckpointError):
    """Unreadable header or unsupported checkpoint format version."""


class CheckpointShapeError(CheckpointError):
    """Tensor shapes in the file disagree with the declared header."""


class CheckpointTruncatedError(CheckpointError):
    """Tensor payload is shorter than the header declares."""
