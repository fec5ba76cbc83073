"""Exception types shared across the package."""


class RespScreenError(Exception):
    """Base class for all package errors."""


class DecodeError(RespScreenError):
    """Input bytes are not a decodable audio container."""


class EmptyInputError(RespScreenError):
    """An operation received zero-length audio or an empty sequence."""


class DegenerateInputError(RespScreenError):
    """Input is structurally valid but degenerate (e.g. all-zero clip)."""


class TooShortError(RespScreenError):
    """Clip is shorter than one analysis frame."""


class ContractError(RespScreenError):
    """A model or adapter violated its input/output contract."""


class ModelLoadError(RespScreenError):
    """A model document or artifact failed validation or loading."""


class ConfigError(RespScreenError):
    """Service or registry configuration is invalid or incomplete."""


class UndefinedMetricError(RespScreenError):
    """A metric is undefined for the given input (e.g. single-class AUC)."""


class UndefinedStackError(RespScreenError):
    """All effective stacking weights are zero."""


class DegenerateTrainingError(RespScreenError):
    """Training data does not contain both classes."""


class SchemaError(RespScreenError):
    """A record, manifest, or document does not match its schema."""


class StorageError(RespScreenError):
    """The submission store failed to persist or read a record."""
