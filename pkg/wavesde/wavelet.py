"""Orthonormal one-level 2D Haar transform and wavelet convolution.

Subband convention for a 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2    top row minus bottom row
    HL = (a - b + c - d) / 2    left column minus right column
    HH = (a - b - c + d) / 2

Stacked tensors keep the four subbands of one source channel adjacent:
channel ``4 * c + k`` holds subband ``k`` (LL, LH, HL, HH) of channel ``c``.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
import pywt
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, WeightError


SUBBANDS = ("LL", "LH", "HL", "HH")

ArrayLike = Union[torch.Tensor, np.ndarray]


def haar_filters(dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
    """Analysis filter bank of shape (4, 1, 2, 2) in LL, LH, HL, HH order."""
    w = pywt.Wavelet("haar")
    lo = torch.tensor(w.dec_lo[::-1], dtype=dtype, device=device)
    hi = torch.tensor(w.dec_hi[::-1], dtype=dtype, device=device)
    return torch.stack([
        lo.unsqueeze(1) * lo.unsqueeze(0),
        hi.unsqueeze(1) * lo.unsqueeze(0),
        lo.unsqueeze(1) * hi.unsqueeze(0),
        hi.unsqueeze(1) * hi.unsqueeze(0),
    ], dim=0)[:, None]


def _as_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(x))
    return x


def _check_even(h: int, w: int, what: str = "image") -> None:
    if h % 2 or w % 2:
        raise DimensionError(f"{what} dimensions must be even, got ({h}, {w})")


def analysis(x: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W) -> (N, 4C, H/2, W/2)."""
    n, c, h, w = x.shape
    _check_even(h, w)
    filters = haar_filters(x.dtype, x.device).repeat(c, 1, 1, 1)
    return F.conv2d(x, filters, stride=2, groups=c)


def synthesis(y: torch.Tensor) -> torch.Tensor:
    """(N, 4C, h, w) -> (N, C, 2h, 2w); the adjoint of ``analysis``."""
    n, c4, h, w = y.shape
    if c4 % 4:
        raise DimensionError(f"subband stack needs a multiple of 4 channels, got {c4}")
    filters = haar_filters(y.dtype, y.device).repeat(c4 // 4, 1, 1, 1)
    return F.conv_transpose2d(y, filters, stride=2, groups=c4 // 4)


@dataclass(frozen=True)
class SubbandImage:
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor
    source_shape: Tuple[int, int]

    def __post_init__(self):
        shape = self.ll.shape
        for name, band in zip(SUBBANDS[1:], (self.lh, self.hl, self.hh)):
            if band.shape != shape:
                raise DimensionError(f"{name} has shape {tuple(band.shape)}, LL has {tuple(shape)}")
        h, w = self.source_shape
        if (shape[-2] * 2, shape[-1] * 2) != (h, w):
            raise DimensionError(
                f"subbands of shape {tuple(shape[-2:])} do not halve source {self.source_shape}"
            )

    @property
    def bands(self) -> Tuple[torch.Tensor, ...]:
        return (self.ll, self.lh, self.hl, self.hh)

    def energy(self) -> float:
        return float(sum((b.double() ** 2).sum() for b in self.bands))


def dwt2(img: ArrayLike) -> SubbandImage:
    """One-level orthonormal Haar analysis of the last two axes."""
    img = _as_tensor(img)
    *lead, h, w = img.shape
    _check_even(h, w)
    coeffs = analysis(img.reshape(-1, 1, h, w))
    bands = [coeffs[:, k].reshape(*lead, h // 2, w // 2) for k in range(4)]
    return SubbandImage(*bands, source_shape=(h, w))


def idwt2(sub: SubbandImage) -> torch.Tensor:
    *lead, h, w = sub.ll.shape
    coeffs = torch.stack([b.reshape(-1, h, w) for b in sub.bands], dim=1)
    return synthesis(coeffs).reshape(*lead, 2 * h, 2 * w)


def stack_subbands(sub: SubbandImage) -> torch.Tensor:
    """(..., 4, H/2, W/2) in LL, LH, HL, HH channel order."""
    return torch.stack(sub.bands, dim=-3)


def unstack_subbands(stacked: ArrayLike) -> SubbandImage:
    stacked = _as_tensor(stacked)
    if stacked.dim() < 3 or stacked.shape[-3] != 4:
        raise DimensionError(f"expected 4 subband channels, got shape {tuple(stacked.shape)}")
    h, w = stacked.shape[-2:]
    return SubbandImage(*stacked.unbind(dim=-3), source_shape=(2 * h, 2 * w))


# ============================================================================
# WAVELET CONVOLUTION
# ============================================================================

def receptive_field(levels: int, kernel_size: int) -> int:
    return 2 ** levels * kernel_size


def param_count(levels: int, channels: int, kernel_size: int) -> int:
    """Depth-wise kernel weights stored by a wavelet convolution."""
    return levels * 4 * channels * kernel_size ** 2


def wtconv(x: torch.Tensor, weights: Sequence[torch.Tensor], levels: int = None) -> torch.Tensor:
    """
    Recursive wavelet convolution ``IDWT(Conv(w, DWT(x)))``.

    ``weights[i]`` is the depth-wise kernel of level ``i`` with shape
    (4C, 1, k, k). Level ``i + 1`` operates on the unconvolved LL band of
    level ``i`` and its output is added back onto the convolved LL band
    before the inverse transform.
    """
    levels = len(weights) if levels is None else levels
    n, c, h, w = x.shape
    if len(weights) != levels:
        raise WeightError(f"{levels} levels need {levels} kernels, got {len(weights)}")
    step = 2 ** levels
    if h % step or w % step:
        raise DimensionError(f"spatial dims ({h}, {w}) are not divisible by 2^{levels}")
    for i, kernel in enumerate(weights):
        if kernel.dim() != 4 or kernel.shape[0] != 4 * c or kernel.shape[1] != 1:
            raise WeightError(
                f"level {i} kernel must have shape (4*{c}, 1, k, k), got {tuple(kernel.shape)}"
            )
        if kernel.shape[2] % 2 == 0 or kernel.shape[2] != kernel.shape[3]:
            raise WeightError(f"level {i} kernel must be square with odd size, got {tuple(kernel.shape)}")
    if levels == 0:
        return x
    return _wtconv_level(x, weights, 0)


def _wtconv_level(x: torch.Tensor, weights: Sequence[torch.Tensor], level: int) -> torch.Tensor:
    n, c, h, w = x.shape
    coeffs = analysis(x)
    kernel = weights[level]
    out = F.conv2d(coeffs, kernel, padding=kernel.shape[-1] // 2, groups=4 * c)
    if level + 1 < len(weights):
        grouped = coeffs.reshape(n, c, 4, h // 2, w // 2)
        deeper = _wtconv_level(grouped[:, :, 0], weights, level + 1)
        out = out.reshape(n, c, 4, h // 2, w // 2)
        out = torch.cat([(out[:, :, 0] + deeper).unsqueeze(2), out[:, :, 1:]], dim=2)
        out = out.reshape(n, 4 * c, h // 2, w // 2)
    return synthesis(out)


class WTConv2d(nn.Module):
    """Depth-wise base convolution plus an ``levels``-deep wavelet convolution."""

    def __init__(self, channels: int, kernel_size: int = 3, levels: int = 2, bias: bool = True):
        super().__init__()
        self.channels = channels
        self.kernel_size = kernel_size
        self.levels = levels

        self.base_conv = nn.Conv2d(
            channels, channels, kernel_size, padding=kernel_size // 2, groups=channels, bias=bias
        )
        self.wavelet_convs = nn.ModuleList([
            nn.Conv2d(
                channels * 4, channels * 4, kernel_size,
                padding=kernel_size // 2, groups=channels * 4, bias=False,
            )
            for _ in range(levels)
        ])
        # Wavelet branch starts small so the block begins close to its base conv.
        with torch.no_grad():
            for conv in self.wavelet_convs:
                conv.weight.mul_(0.1)

    @property
    def wavelet_param_count(self) -> int:
        return sum(conv.weight.numel() for conv in self.wavelet_convs)

    def receptive_radius(self) -> int:
        """Conservative pixel radius of the block's support."""
        half = self.kernel_size // 2
        per_level = [half * 2 ** (i + 1) + 2 * (2 ** (i + 1) - 1) for i in range(self.levels)]
        return max([half] + per_level)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        kernels = [conv.weight for conv in self.wavelet_convs]
        return self.base_conv(x) + wtconv(x, kernels, self.levels)


def subband_bounds(lo: float, hi: float, channels: int = 1) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-channel value bounds of the Haar coefficients of an image in [lo, hi].

    Returns (low, high) tensors of shape (4 * channels, 1, 1).
    """
    span = hi - lo
    low = torch.tensor([2 * lo, -span, -span, -span], dtype=torch.float64)
    high = torch.tensor([2 * hi, span, span, span], dtype=torch.float64)
    return low.repeat(channels).view(-1, 1, 1), high.repeat(channels).view(-1, 1, 1)

