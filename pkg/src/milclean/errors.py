"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right type
matters more than the message text.
"""


class MilcleanError(Exception):
    """Base class for all package errors."""


class ValidationError(MilcleanError):
    """Malformed input: bad shapes, out-of-range parameters, unreadable files."""


class DegenerateAnnotationError(MilcleanError):
    """An annotation has no positive (or no negative) tissue cells.

    Single-slide training cannot proceed; the caller should widen the
    slide set (multi-slide mode) or fix the annotation.
    """


class NumericError(MilcleanError):
    """A numeric failure such as a non-finite loss during training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateHistogramError(MilcleanError):
    """All values fall into a single histogram bin; no threshold splits them."""
