"""Image quality and slice consistency metrics."""

import logging
import math
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, PositiveFloat
from skimage.metrics import structural_similarity

from .errors import MetricError
from .volume import Volume


logger = logging.getLogger(__name__)

Field = Union[np.ndarray, Volume]

# slicing axis of each plane in [x, y, z] indexing
PLANE_AXES = {"xy": 2, "xz": 1, "yz": 0}


class EvalOptions(BaseModel):
    data_range: PositiveFloat = 1.0
    volume_id: Optional[str] = None


def _pair(a: Field, b: Field):
    a = np.asarray(a.data if isinstance(a, Volume) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Volume) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: Field, b: Field, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    if not data_range > 0:
        raise MetricError(f"data_range must be > 0, got {data_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim(
    a: Field,
    b: Field,
    data_range: float = 1.0,
    win_size: int = 11,
    sigma: float = 1.5,
    K1: float = 0.01,
    K2: float = 0.03,
) -> float:
    """Mean SSIM with a Gaussian window."""
    a, b = _pair(a, b)
    if min(a.shape) < win_size:
        raise MetricError(f"image of shape {a.shape} is smaller than the {win_size}-pixel window")
    # truncate chosen so the Gaussian window spans exactly win_size pixels
    truncate = ((win_size - 1) / 2) / sigma
    return float(structural_similarity(
        a, b,
        data_range=data_range,
        gaussian_weights=True,
        sigma=sigma,
        truncate=truncate,
        use_sample_covariance=False,
        K1=K1,
        K2=K2,
    ))


def plane_means(pred: Field, ref: Field, data_range: float = 1.0, win_size: int = 11) -> Dict[str, Dict[str, float]]:
    """PSNR and SSIM averaged over the slices of each orthogonal plane."""
    pred, ref = _pair(pred, ref)
    if pred.ndim != 3:
        raise MetricError(f"expected a 3D volume, got shape {pred.shape}")
    table = {}
    for plane, axis in PLANE_AXES.items():
        p = np.moveaxis(pred, axis, 0)
        r = np.moveaxis(ref, axis, 0)
        table[plane] = {
            "psnr": float(np.mean([psnr(p[i], r[i], data_range) for i in range(p.shape[0])])),
            "ssim": float(np.mean([ssim(p[i], r[i], data_range, win_size) for i in range(p.shape[0])])),
        }
    return table


def z_discontinuity(vol: Field) -> float:
    """
    Mean |difference| between consecutive XY slices divided by the mean
    in-slice gradient magnitude (forward differences). Lower is smoother.
    """
    data = np.asarray(vol.data if isinstance(vol, Volume) else vol, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] < 2:
        raise MetricError(f"need a 3D volume with at least two XY slices, got shape {data.shape}")
    across = float(np.mean(np.abs(np.diff(data, axis=2))))
    gx = np.diff(data, axis=0)[:, :-1, :]
    gy = np.diff(data, axis=1)[:-1, :, :]
    within = float(np.mean(np.sqrt(gx ** 2 + gy ** 2)))
    if across == 0.0:
        return 0.0
    if within == 0.0:
        return math.inf
    return across / within


def evaluate(pred: Field, ref: Field, volume_id: str = "volume", data_range: float = 1.0) -> pd.DataFrame:
    """Long-form report rows (volume_id, plane, metric, value)."""
    rows = [{"volume_id": volume_id, "plane": "3d", "metric": "psnr", "value": psnr(pred, ref, data_range)}]
    for plane, values in plane_means(pred, ref, data_range).items():
        for metric, value in values.items():
            rows.append({"volume_id": volume_id, "plane": plane, "metric": metric, "value": value})
    rows.append({"volume_id": volume_id, "plane": "z", "metric": "z_discontinuity", "value": z_discontinuity(pred)})
    rows.append({"volume_id": volume_id, "plane": "z", "metric": "z_discontinuity_ref", "value": z_discontinuity(ref)})
    return pd.DataFrame(rows, columns=["volume_id", "plane", "metric", "value"])


def write_report(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %d metric rows to %s", len(frame), path)
    return path
