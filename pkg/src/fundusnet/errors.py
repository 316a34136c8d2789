"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit with 1,
data and file-format problems with 2, numerical failures with 3.
"""


class FundusnetError(Exception):
    """Base class for all package errors."""


class DimensionError(FundusnetError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(FundusnetError):
    """An operation was called outside its contract (e.g. backward on a
    non-scalar, schedule queried out of range)."""


class ConfigError(FundusnetError):
    """Invalid or inconsistent configuration."""


class DataError(FundusnetError):
    """Dataset-level problem: bad manifest, missing files, decode failure."""


class FormatError(DataError):
    """Malformed or truncated checkpoint / serialized artifact."""


class CompatibilityError(DataError):
    """Checkpoint and current configuration disagree (hash or class count)."""


class NumericalError(FundusnetError):
    """Non-finite values where finite ones are required."""


class UndefinedMetricError(FundusnetError):
    """The requested metric has no defined value on this input."""
