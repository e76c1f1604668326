"""Exception hierarchy shared across the package."""


class MortfitError(Exception):
    """Base class for every error raised by mortfit."""


class ParseError(MortfitError):
    """Malformed input text. ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DataError(MortfitError):
    """Input data is well-formed but unusable (duplicates, gaps, zeros)."""


class CapabilityError(MortfitError):
    """The requested operation needs data the surface does not carry."""


class NumericalError(MortfitError):
    """A numerical routine failed to converge or produced non-finite values."""

    def __init__(self, message, **state):
        super().__init__(message)
        self.state = state


class DegenerateNormalizationError(NumericalError):
    """A sum-to-one constraint cannot be imposed (the relevant sum is ~0)."""
