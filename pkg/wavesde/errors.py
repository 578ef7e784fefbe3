"""Exception hierarchy for the restoration engine."""

from typing import Optional


class WaveSDEError(Exception):
    """Base class for every error raised by this package."""
    pass


class ParameterError(WaveSDEError, ValueError):
    """Invalid scalar parameter (schedule, motion spec, provider, config)."""
    pass


class DimensionError(WaveSDEError, ValueError):
    """Shape or dimension mismatch."""
    pass


class BoundsError(WaveSDEError, IndexError):
    """Slice index outside the plane bound."""
    pass


class VolumeIOError(WaveSDEError):
    """Malformed or inconsistent volume file."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class WeightError(WaveSDEError):
    """Kernel or checkpoint weights do not match the architecture."""
    pass


class StepError(WaveSDEError, ValueError):
    """Reverse step requested at an invalid timestep."""
    pass


class OracleLookupError(WaveSDEError, LookupError):
    """Noise requested for a (step, plane) that was never recorded."""
    pass


class DatasetError(WaveSDEError):
    """Unpaired, missing or odd-shaped training data."""
    pass


class ConfigurationError(WaveSDEError):
    """Providers, checkpoints and sampler settings do not fit together."""
    pass


class DegenerateSpecError(WaveSDEError):
    """Motion spec that cannot touch any k-space line on this volume."""
    pass


class MetricError(WaveSDEError, ValueError):
    """Metric inputs are incompatible (shape, window size, range)."""
    pass


class NumericError(WaveSDEError, ArithmeticError):
    """Non-finite values appeared during a computation."""
    pass


class StorageError(WaveSDEError):
    """A result file could not be written."""
    pass
