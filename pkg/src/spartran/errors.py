"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class is
part of the external contract: ConfigError -> usage (2), DataError -> bad or
missing data (3), NumericError -> numeric invariant violations (4).
"""


class ConfigError(ValueError):
    """Malformed configuration or command usage."""


class DataError(ValueError):
    """Missing, truncated, or inconsistent data artifacts."""


class NumericError(ArithmeticError):
    """A numeric invariant was violated (NaN loss, stalled atom, ...)."""
