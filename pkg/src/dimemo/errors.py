"""Exception hierarchy with stable machine-parsable codes.

Every error the package raises on bad input derives from DimemoError and
carries a short ``code`` used by the command line front-end, which prints
``<code>: <message>`` on stderr and exits nonzero.
"""

from __future__ import annotations


class DimemoError(Exception):
    """Base class for all package errors."""

    code = "error"


class ValidationError(DimemoError):
    """A value or argument violates a documented precondition."""

    code = "validation"


class CorpusFormatError(DimemoError):
    """A corpus file is malformed; message names the file and line."""

    code = "corpus-format"

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        if path is not None:
            loc = path if line is None else f"{path}:{line}"
            message = f"{loc}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class GridMismatchError(DimemoError):
    """Stream or annotation length disagrees with the 250 ms grid."""

    code = "grid-mismatch"


class DimensionMismatchError(DimemoError):
    """Feature dimensionality disagrees between producer and consumer."""

    code = "dim-mismatch"


class StreamFormatError(DimemoError):
    """A feature-stream file is malformed or truncated."""

    code = "stream-format"


class ModelFormatError(DimemoError):
    """A model file is malformed, truncated, or from a different layout."""

    code = "model-format"


class GradientUndefinedError(DimemoError):
    """The loss gradient does not exist for the given batch."""

    code = "gradient-undefined"


class DegenerateIntervalError(DimemoError):
    """A confidence interval is undefined at |ccc| = 1."""

    code = "degenerate-interval"


class UndefinedVarianceError(DimemoError):
    """The interval's variance estimate is undefined (zero correlation)."""

    code = "undefined-variance"


class TrainingDivergedError(DimemoError):
    """Training produced a non-finite loss or gradient."""

    code = "diverged"

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class MissingDataError(DimemoError):
    """A conversation lacks a stream, track, or latent needed by an op."""

    code = "missing-data"
