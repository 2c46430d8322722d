"""Exception types shared across the package."""


class DSformerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DSformerError):
    """Invalid configuration value or combination."""


class DimensionError(DSformerError):
    """Tensor shapes do not conform for the requested operation."""


class GraphError(DSformerError):
    """Computation graph misuse, e.g. backward through mutated values."""


class NumericsError(DSformerError):
    """Non-finite value produced where finite values are required."""


class DataError(DSformerError):
    """Malformed input data (CSV parse failures, empty files)."""


class CheckpointError(DSformerError):
    """Corrupt, truncated, or unsupported checkpoint file."""


class TrainingError(DSformerError):
    """Training aborted (non-finite loss or similar hard failure)."""
