"""Moves whole planes of a volume in and out of the diffusion domain.

A plane batch has shape (slices, C, h, w): C = 4 at half resolution in the
wavelet domain, C = 1 at full resolution in the image domain.
"""

from typing import Tuple, Union

import numpy as np
import torch

from .volume import Plane, Volume
from .wavelet import analysis, subband_bounds, synthesis


def volume_tensor(vol: Union[Volume, np.ndarray], dtype=torch.float64, device=None) -> torch.Tensor:
    data = vol.data if isinstance(vol, Volume) else vol
    return torch.as_tensor(np.ascontiguousarray(data), dtype=dtype, device=device)


def to_domain(volume: torch.Tensor, plane: Union[Plane, str], wavelet: bool) -> torch.Tensor:
    stack = volume.permute(*Plane(plane).order).unsqueeze(1)
    return analysis(stack) if wavelet else stack


def from_domain(batch: torch.Tensor, plane: Union[Plane, str], wavelet: bool) -> torch.Tensor:
    stack = synthesis(batch) if wavelet else batch
    return stack.squeeze(1).permute(*Plane(plane).inverse_order)


def clamp_bounds(lo: float, hi: float, wavelet: bool) -> Tuple:
    """x0_hat clamp range expressed in the coefficients of the domain."""
    if wavelet:
        return subband_bounds(lo, hi)
    return (lo, hi)
