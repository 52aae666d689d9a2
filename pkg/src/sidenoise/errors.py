"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, ParseError /
ValidationError / InputError -> 2, NumericalError -> 3.
"""


class SideNoiseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SideNoiseError):
    """A hyper-parameter or configuration value is out of its allowed domain."""


class ParseError(SideNoiseError):
    """An input file does not conform to its declared format."""


class ValidationError(SideNoiseError):
    """A structural invariant of the data is violated."""


class InputError(SideNoiseError):
    """A required input artifact is missing."""


class NumericalError(SideNoiseError):
    """A numerical computation failed (divergence, non-finite values)."""
