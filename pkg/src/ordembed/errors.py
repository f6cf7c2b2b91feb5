"""Exception taxonomy shared across the package.

Validation failures (bad parameters, malformed files) and pipeline
failures (structural or numerical breakdown mid-run) are kept on
separate branches so the CLI can map them to distinct exit codes.
"""

from __future__ import annotations


class OrdembedError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(OrdembedError):
    """Input rejected before any computation started."""


class InvalidParameterError(ValidationError):
    """A parameter value is outside its documented domain."""


class InvalidInputError(ValidationError):
    """A data object violates a documented precondition."""


class ParseError(ValidationError):
    """A file could not be parsed.  Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateInputError(ValidationError):
    """Input is formally valid but degenerate for the requested operation."""


class PipelineError(OrdembedError):
    """Computation started but could not be completed."""


class StructuralError(PipelineError):
    """A graph-structural requirement failed mid-pipeline (e.g. a
    disconnected patch graph).  The message names the offending stage."""


class DegenerateAlignmentError(PipelineError):
    """Shared coordinates of two patches are too degenerate to align."""


class NumericalError(PipelineError):
    """An iterative solver diverged or produced non-finite values."""


class SolverError(PipelineError):
    """An external or injected solver reported failure."""
