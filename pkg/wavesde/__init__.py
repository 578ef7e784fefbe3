"""Pseudo-3D mean-reverting SDE restoration of motion-corrupted volumes."""

from .errors import WaveSDEError
from .motion import MotionSpec, corrupt
from .network import Denoiser, DenoiserConfig
from .providers import DenoiserProvider, GaussianProvider, NoiseStore, OracleProvider
from .sampler import SamplerConfig, restore, restore_2d_baseline
from .sde import NoiseSchedule, build_schedule
from .volume import Plane, Volume, load_volume, save_volume

__all__ = [
    "Denoiser",
    "DenoiserConfig",
    "DenoiserProvider",
    "GaussianProvider",
    "MotionSpec",
    "NoiseSchedule",
    "NoiseStore",
    "OracleProvider",
    "Plane",
    "SamplerConfig",
    "Volume",
    "WaveSDEError",
    "build_schedule",
    "corrupt",
    "load_volume",
    "restore",
    "restore_2d_baseline",
    "save_volume",
]
