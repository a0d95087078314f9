"""Exception hierarchy shared by all modules.

Validation problems (bad parameters, malformed inputs, capacity limits)
derive from ParameterError; solver breakdowns derive from NumericalFailure.
The command-line runner maps the former to exit code 2 and the latter to 3.
"""


class ParameterError(ValueError):
    """Input outside the documented parameter domain."""


class CapacityError(ParameterError):
    """State space exceeds the exact-solver cap; use the Monte Carlo path."""


class InsufficientDataError(ParameterError):
    """Not enough samples/points for the requested estimate."""


class NumericalFailure(RuntimeError):
    """A numerical routine failed to converge; diagnostics in args."""


class DecodingError(RuntimeError):
    """Decoder could not produce a valid correction."""
