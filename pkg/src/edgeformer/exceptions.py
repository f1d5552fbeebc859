"""Exception hierarchy. Validation problems and I/O problems are kept apart
so the command line can map them to distinct exit codes."""


class EdgeformerError(Exception):
    """Base class for all package errors."""


class ValidationError(EdgeformerError, ValueError):
    """Input violates a documented precondition."""


class DimensionError(ValidationError):
    """Tensor shapes are incompatible."""


class ConfigurationError(ValidationError):
    """A configuration value or combination is invalid."""


class NonFiniteError(EdgeformerError, FloatingPointError):
    """An operation produced NaN or Inf."""


class NonDeterministicError(EdgeformerError):
    """Repeated evaluation of a supposedly pure function disagreed."""


class TransferError(ValidationError):
    """Pretrained parameters are not layout-compatible with the target model."""


class FormatError(EdgeformerError):
    """Base class for file-format errors (I/O exit code)."""


class ParseError(FormatError, ValueError):
    """A dataset row could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(FormatError, ValueError):
    """A dataset header does not match the declared widths."""


class CheckpointError(FormatError):
    """Base class for checkpoint decoding failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint version is not understood by this reader."""


class TruncatedFileError(CheckpointError):
    """Checkpoint ends before the declared content."""
