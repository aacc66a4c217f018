"""Exception hierarchy for the subspace_net package.

Public functions raise these semantic errors instead of bare ValueError /
RuntimeError so callers can distinguish bad arguments, degenerate inputs,
diverging optimization, and corrupt files.
"""

from __future__ import annotations


class SubspaceNetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(SubspaceNetError, ValueError):
    """An argument violates its contract (non-finite, out of range, bad rank)."""


class DimensionError(SubspaceNetError, ValueError):
    """Array shapes do not agree with the operation's contract."""


class EmptyInputError(SubspaceNetError, ValueError):
    """An operation that needs at least one element received none."""


class DegenerateInputError(SubspaceNetError, ValueError):
    """A zero-norm column/row or zero-variance input makes a metric undefined."""


class ConditioningError(SubspaceNetError, ValueError):
    """A linear system is singular or numerically unusable as posed."""


class StepSizeError(SubspaceNetError, RuntimeError):
    """A gradient update produced non-finite values (step size too large).

    ``iteration`` is the 0-based sample index at which divergence was
    detected. When raised from a full training pass, ``last_state`` holds the
    last finite ``(U, V)`` pair and ``trace`` the log collected so far.
    """

    def __init__(self, message: str, iteration: int | None = None,
                 last_state=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_state = last_state
        self.trace = trace


class ParseError(SubspaceNetError, ValueError):
    """A CSV or config file is malformed; the message pinpoints file/line/column."""


class ConfigError(SubspaceNetError, ValueError):
    """An experiment configuration failed schema validation."""


class ModelFormatError(SubspaceNetError):
    """A model file is not in the expected binary format."""


class ModelVersionError(ModelFormatError):
    """The model file declares an unsupported format version."""


class TruncatedModelError(ModelFormatError):
    """The model file ends before the declared payload is complete."""


class ChecksumError(ModelFormatError):
    """The model file's trailing CRC32 does not match its contents."""


class SaturationWarning(RuntimeWarning):
    """Emitted when a censored-likelihood argument is clamped to its cap."""
