"""Exception hierarchy shared across the package."""


class PfmcmcError(Exception):
    """Base class for all package errors."""


class TotalWeightZero(PfmcmcError):
    """Every particle weight is zero; the filter has degenerated."""


class ConfigError(PfmcmcError):
    """Invalid configuration. ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class TransformError(PfmcmcError):
    """Parameter value on or outside the boundary of its support."""


class IngestError(PfmcmcError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedVariant(PfmcmcError):
    """The model lacks the capability the requested filter needs."""


class FitError(PfmcmcError):
    """Mixture fitting was not possible with the supplied draws."""


class EvidenceError(PfmcmcError):
    """Marginal-likelihood estimate could not be formed."""


class RoundError(PfmcmcError):
    """A parallel round failed; the chain was left unchanged."""
