"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, UndefinedMetricError -> 4. Contract violations signal
caller bugs and are not mapped; they propagate as ordinary tracebacks.
"""


class AdbankError(Exception):
    """Base class for all package errors."""


class ContractViolationError(AdbankError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(AdbankError):
    """A user-supplied configuration (scenario, train, score) is invalid."""


class DataError(AdbankError):
    """Input data (manifests, feature files, budgets) is missing or malformed."""


class UndefinedMetricError(AdbankError):
    """A metric is undefined for the given inputs (e.g. single-class AUROC)."""


class FormatError(DataError):
    """Base class for binary interchange-format parse errors."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """File declares a format version this reader does not support."""


class TruncatedPayloadError(FormatError):
    """File ended before the declared payload was complete."""


class StageCountError(FormatError):
    """Feature file declares a stage count other than 4."""


class PayloadNotFiniteError(FormatError):
    """Feature or text payload contains NaN or infinite values."""


class SchemaError(DataError):
    """A JSON document does not match its documented schema."""
