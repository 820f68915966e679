"""Exception hierarchy for the pipeline.

Two families matter for the CLI exit code: ValidationError subclasses map to
exit status 1 (bad values, violated invariants, malformed configuration) and
IoError subclasses map to exit status 2 (missing, unreadable or corrupt files,
run-directory lock conflicts).
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PipelineError):
    """Semantic errors in values or shapes (CLI exit status 1)."""


class IoError(PipelineError):
    """File-level errors: missing, unreadable or corrupt inputs (CLI exit status 2)."""


# ---------------------------------------------------------------------------
# media-io

class EmptyDirectory(IoError):
    pass


class MalformedImage(IoError):
    pass


class DimensionMismatch(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class GridTooFine(ValidationError):
    pass


class TensorFormatError(IoError):
    """Corrupt or unsupported tensor container."""


class BadMagic(TensorFormatError):
    pass


class UnsupportedVersion(TensorFormatError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


# ---------------------------------------------------------------------------
# quantizer

class DegenerateData(ValidationError):
    pass


class NonConvergentSVD(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


# ---------------------------------------------------------------------------
# tcp

class SequenceTooShort(ValidationError):
    pass


class CodeOutOfRange(ValidationError):
    pass


class EmptyHistogram(ValidationError):
    pass


# ---------------------------------------------------------------------------
# fusion

class UnnormalizedInput(ValidationError):
    pass


# ---------------------------------------------------------------------------
# eval

class LengthMismatch(ValidationError):
    pass


class MissingMasks(ValidationError):
    pass


class DegenerateCurve(ValidationError):
    pass


# ---------------------------------------------------------------------------
# cli

class ConfigParseError(ValidationError):
    pass
