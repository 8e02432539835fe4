"""Exception types shared across the toolkit.

The split matters for the CLI exit codes: usage errors exit 1, data or
physical-domain errors exit 2, numerical failures exit 3.
"""


class UsageError(ValueError):
    """Caller passed arguments that violate an operation's contract."""


class DomainError(ValueError):
    """Inputs are outside the physical domain of the model."""


class DataFormatError(ValueError):
    """A file or payload failed validation while being read."""


class NumericalError(RuntimeError):
    """A numerical procedure failed beyond the configured tolerance."""
