"""Exception types shared across the package.

Every error carries a stable ``code`` string so embedding layers and the
CLI can classify failures without parsing messages.
"""


class SimctError(Exception):
    """Base class for all errors raised by this package."""

    code = "internal"


class DuplicateTokenError(SimctError):
    code = "duplicate_token"


class EmptyTokenError(SimctError):
    code = "empty_token"


class VocabularyFormatError(SimctError):
    code = "vocabulary_format"


class UnsegmentableTextError(SimctError):
    code = "unsegmentable_text"

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class GapOrOverlapError(SimctError):
    code = "gap_or_overlap"


class TokenMismatchError(SimctError):
    code = "token_mismatch"


class TextMismatchError(SimctError):
    code = "text_mismatch"


class RealizationMissingError(SimctError):
    code = "realization_missing"


class SpaceMismatchError(SimctError):
    code = "space_mismatch"


class DistributionError(SimctError):
    code = "invalid_distribution"


class CoverageError(SimctError):
    code = "coverage_error"


class EmptyStreamError(SimctError):
    code = "empty_stream"


class ConfigError(SimctError):
    code = "config_error"


class InternalCheckError(SimctError):
    code = "internal_check"


# Errors caused by user-supplied inputs; the CLI maps these to exit code 2.
INPUT_ERRORS = (
    DuplicateTokenError,
    EmptyTokenError,
    VocabularyFormatError,
    UnsegmentableTextError,
    GapOrOverlapError,
    TokenMismatchError,
    TextMismatchError,
    RealizationMissingError,
    SpaceMismatchError,
    DistributionError,
    CoverageError,
    EmptyStreamError,
    ConfigError,
)
