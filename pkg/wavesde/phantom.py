"""Synthetic head-like ellipsoid phantoms and paired training data."""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .motion import MotionSpec, corrupt
from .rng import substream
from .volume import Volume, normalize, save_volume


logger = logging.getLogger(__name__)


def _ellipsoid_mask(grid: np.ndarray, centre, axes, angle: float) -> np.ndarray:
    x, y, z = (grid[i] - centre[i] for i in range(3))
    c, s = np.cos(angle), np.sin(angle)
    xr, yr = c * x + s * y, -s * x + c * y
    return (xr / axes[0]) ** 2 + (yr / axes[1]) ** 2 + (z / axes[2]) ** 2 <= 1.0


def ellipsoid_phantom(
    shape: Sequence[int] = (32, 32, 32),
    n_ellipsoids: int = 6,
    rng: Optional[np.random.Generator] = None,
    smoothing: float = 0.7,
) -> Volume:
    """
    Outer skull-like shell, a brain-like interior and ``n_ellipsoids`` random
    inner structures rotated in the XY plane. Normalized to [0, 1].
    """
    rng = rng if rng is not None else substream(0, "phantom")
    axes_1d = [np.linspace(-1.0, 1.0, n) for n in shape]
    grid = np.stack(np.meshgrid(*axes_1d, indexing="ij"))

    data = np.zeros(tuple(shape), dtype=np.float64)
    data[_ellipsoid_mask(grid, (0, 0, 0), (0.9, 0.85, 0.8), 0.0)] = 1.0
    data[_ellipsoid_mask(grid, (0, 0, 0), (0.8, 0.75, 0.7), 0.0)] = 0.4
    for _ in range(n_ellipsoids):
        centre = rng.uniform(-0.45, 0.45, 3)
        axes = rng.uniform(0.08, 0.3, 3)
        angle = rng.uniform(0.0, np.pi)
        data[_ellipsoid_mask(grid, centre, axes, angle)] += rng.uniform(-0.2, 0.4)

    if smoothing > 0:
        data = gaussian_filter(data, smoothing)
    return Volume(normalize(data))


def make_pairs(
    n: int,
    shape: Sequence[int] = (32, 32, 32),
    spec: Optional[MotionSpec] = None,
    seed: int = 0,
) -> List[Tuple[Volume, Volume]]:
    """``n`` (clean, corrupted) phantom pairs, each with its own motion draw."""
    spec = spec or MotionSpec.preset("mild")
    pairs = []
    for i in range(n):
        clean = ellipsoid_phantom(shape, rng=substream(seed, "phantom", i))
        motion_seed = int(substream(seed, "motion", i).integers(2 ** 31))
        corrupted, _ = corrupt(clean, spec.model_copy(update={"seed": motion_seed}))
        pairs.append((clean, corrupted))
    logger.info("Generated %d phantom pairs of shape %s", n, tuple(shape))
    return pairs


def save_pairs(pairs: Sequence[Tuple[Volume, Volume]], directory: Union[str, Path], prefix: str = "phantom") -> Path:
    directory = Path(directory)
    for i, (clean, corrupted) in enumerate(pairs):
        save_volume(clean, directory / f"{prefix}{i:03d}.clean.vol")
        save_volume(corrupted, directory / f"{prefix}{i:03d}.corrupt.vol")
    return directory
