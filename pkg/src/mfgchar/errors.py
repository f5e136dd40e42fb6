"""Exception hierarchy shared by every module."""


class MfgError(Exception):
    """Base class for all library errors."""


class InvalidInputError(MfgError, ValueError):
    """Malformed argument: wrong dimension, non-finite value, bad range."""


class UnsupportedCaseError(MfgError):
    """Input is well formed but outside what the library handles."""


class NoConvergenceError(MfgError):
    """Picard iteration failed to reach the requested tolerance.

    ``diffs`` and ``ratios`` carry the per-iteration sup-norm differences and
    their successive ratios so callers can report why it failed.
    """

    def __init__(self, message, diffs=(), ratios=()):
        super().__init__(message)
        self.diffs = list(diffs)
        self.ratios = list(ratios)


class DivergenceError(NoConvergenceError):
    """Iteration produced non-finite values or kept expanding."""


class InversionError(MfgError):
    """Newton inversion of the flow map failed."""


class ConfigError(MfgError):
    """Scenario or configuration file is invalid."""
