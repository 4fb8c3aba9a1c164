"""Exception hierarchy shared by all shiftconv modules.

Every error carries a stable kebab-case slug so the CLI and the HTTP
service can map failures to exit codes / response bodies without string
matching on free-form text.
"""


class ShiftConvError(Exception):
    """Base class for all toolkit errors."""

    slug = "error"

    def __init__(self, message: str):
        super().__init__(f"{self.slug}: {message}")
        self.message = message


class InvalidConfigError(ShiftConvError):
    """Bad quantizer/tool configuration (usage error)."""

    slug = "invalid-config"


class DomainError(ShiftConvError):
    """Numerical input outside an operation's documented domain."""

    slug = "domain-error"


class ShapeMismatchError(ShiftConvError):
    slug = "shape-mismatch"


class InputWidthError(ShiftConvError):
    """Engine input does not fit the 8-bit signed datapath."""

    slug = "input-width-exceeded"


class AccumulatorOverflowError(ShiftConvError):
    """Accumulation would not fit (or did not fit) 32 signed bits."""

    slug = "accumulator-overflow"


class FormatError(ShiftConvError):
    """Base class for file/wire format problems."""

    slug = "format-error"


class BadMagicError(FormatError):
    slug = "bad-magic"


class TruncatedPayloadError(FormatError):
    slug = "truncated-payload"


class UnsupportedVersionError(FormatError):
    slug = "unsupported-version"


class MalformedManifestError(FormatError):
    slug = "malformed-manifest"


class BlobLengthMismatchError(FormatError):
    slug = "blob-length-mismatch"


class IndexOutOfRangeError(FormatError):
    slug = "index-out-of-range"
