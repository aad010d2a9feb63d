"""Exception hierarchy shared across the package."""


class BoxUKGError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BoxUKGError, ValueError):
    """Bad shapes, bad arguments, or an invalid configuration."""


class NumericDomainError(BoxUKGError, ArithmeticError):
    """An operation was evaluated outside its numeric domain."""


class DegenerateBoxError(NumericDomainError):
    """A conditioning box has (numerically) zero expected volume."""


class NumericFault(BoxUKGError, RuntimeError):
    """A training step produced non-finite values."""


class ParseError(BoxUKGError, ValueError):
    """A malformed line in an input file."""


class ValidationError(BoxUKGError, ValueError):
    """A well-formed value that violates a domain constraint."""


class IdLookupError(BoxUKGError, IndexError):
    """An entity or relation id outside the vocabulary."""


class NameResolutionError(BoxUKGError, KeyError):
    """An entity or relation name missing from the vocabulary."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UndefinedMetricError(BoxUKGError, ValueError):
    """A metric that is undefined for its input (e.g. nDCG with no gains)."""


class CheckpointError(BoxUKGError, ValueError):
    """A checkpoint that cannot be read or does not match its dataset."""
