"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, GroundingCapError -> 4.
"""


class DsiError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DsiError):
    """Invalid configuration, malformed input file, or incompatible artifacts."""


class RuleSyntaxError(ConfigError):
    """Rule file does not conform to the grammar."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class NumericError(DsiError):
    """Non-finite values, gradient failures, or other numeric breakdowns."""


class ShapeError(NumericError):
    """Tensor shapes do not line up in the computation graph."""


class GroundingCapError(DsiError):
    """A rule template produced more ground instances than the configured cap."""
