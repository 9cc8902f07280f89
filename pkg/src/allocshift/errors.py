"""Exception types, grouped so the CLI can map failures to distinct exit codes."""


class AllocShiftError(Exception):
    """Base class for library errors."""


class ConfigError(AllocShiftError, ValueError):
    """Invalid configuration: bad flag values, malformed config files, unusable parameter combos."""


class DataError(AllocShiftError, ValueError):
    """Invalid input data: schema violations, parse failures, empty or inconsistent cohorts."""


class SchemaError(DataError):
    """A named column is missing or the schema itself is malformed."""


class ParseError(DataError):
    """A cell failed to parse; the message names the row."""


class EmptyCohortError(DataError):
    """The input contained no data rows."""


class NumericalError(AllocShiftError, RuntimeError):
    """Numerical failure at run time: infeasible offsets, zero diagonals, sizes beyond caps."""


class InfeasibleOffsetError(NumericalError):
    """An offset vector violates the simplex or divergence-ball constraints."""
