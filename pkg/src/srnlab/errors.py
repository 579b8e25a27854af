"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError is a usage problem, DataError/CheckpointError are
bad inputs, ShapeError/NumericError are math-level failures.
"""


class SrnLabError(Exception):
    """Base class for all srnlab errors."""


class ShapeError(SrnLabError):
    """Operands have incompatible dimensions."""


class NumericError(SrnLabError):
    """Non-finite values or diverging optimization."""


class DataError(SrnLabError):
    """Malformed or degenerate input data."""


class ConfigError(SrnLabError):
    """Invalid configuration value or combination."""


class CheckpointError(SrnLabError):
    """Checkpoint file is corrupt or inconsistent with the requested model."""
