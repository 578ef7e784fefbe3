"""Environment-driven runtime settings."""

import logging
import os
from typing import Optional

import torch

from .errors import ConfigurationError


logger = logging.getLogger(__name__)


def _should_use_cuda() -> bool:
    return os.getenv("WAVESDE_DEVICE", "cpu").lower() == "cuda"


def get_device(device: Optional[str] = None) -> torch.device:
    """
    Get the configured torch device, falling back to CPU.

    An explicit ``device`` argument wins over WAVESDE_DEVICE.
    """
    wanted = device.lower() if device else ("cuda" if _should_use_cuda() else "cpu")
    if wanted == "cuda":
        if torch.cuda.is_available():
            return torch.device("cuda")
        logger.warning("CUDA requested but not available, using CPU")
    return torch.device("cpu")


def _env_int(name: str, default: Optional[int], minimum: int) -> Optional[int]:
    value = os.getenv(name, "").strip()
    if not value:
        return default
    try:
        number = int(value)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got {value!r}") from None
    if number < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {number}")
    return number


def get_threads() -> Optional[int]:
    return _env_int("WAVESDE_THREADS", None, minimum=1)


def apply_threads(threads: Optional[int] = None) -> Optional[int]:
    """Cap torch intra-op parallelism; returns the cap that was applied."""
    threads = threads or get_threads()
    if threads:
        torch.set_num_threads(threads)
        logger.info("Torch threads capped at %d", threads)
    return threads


def get_default_seed() -> int:
    return _env_int("WAVESDE_SEED", 0, minimum=0)


def configure_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv("WAVESDE_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
