"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DivergenceError -> 3, FileFormatError -> 4.
"""


class ContraflowError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ContraflowError, ValueError):
    """Operands have incompatible channel/frame shapes."""


class SpanError(ContraflowError, ValueError):
    """A frame span lies outside the valid [0, T) range."""


class InvalidEditError(ContraflowError, ValueError):
    """An edit is structurally invalid (e.g. source == target start)."""


class DegenerateInputError(ContraflowError, ValueError):
    """Input too small for the operation (e.g. fewer than 2 frames)."""


class BatchTooSmallError(ContraflowError, ValueError):
    """Batch has fewer items than the operation requires."""


class VocabError(ContraflowError, ValueError):
    """A token id falls outside the model vocabulary."""


class CodebookGenerationError(ContraflowError, RuntimeError):
    """Rejection sampling failed to produce a well-separated codebook."""


class UndefinedRateError(ContraflowError, ValueError):
    """Error rate undefined because the normalized reference is empty."""


class FileFormatError(ContraflowError, ValueError):
    """A binary or text artifact failed magic/version/checksum validation."""


class ConfigError(ContraflowError, ValueError):
    """A run configuration is missing keys, mistyped, or inconsistent."""


class DivergenceError(ContraflowError, RuntimeError):
    """Training produced a non-finite loss."""
