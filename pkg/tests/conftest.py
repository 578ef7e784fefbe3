import numpy as np
import pytest
import torch

from wavesde.network import Denoiser, DenoiserConfig
from wavesde.phantom import ellipsoid_phantom
from wavesde.rng import substream
from wavesde.sde import build_schedule
from wavesde.volume import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_volume(rng):
    return Volume(rng.uniform(0.1, 0.9, size=(8, 8, 8)))


@pytest.fixture
def phantom16():
    return ellipsoid_phantom((16, 16, 16), n_ellipsoids=4, rng=substream(0, "phantom"))


@pytest.fixture
def sched():
    return build_schedule(T=10)


@pytest.fixture
def tiny_net():
    torch.manual_seed(0)
    return Denoiser(DenoiserConfig(width=4, levels=0))


class LinearHead(torch.nn.Module):
    """Single linear convolution over (x_t, mu); ignores the time channel."""

    def __init__(self, channels: int = 4, kernel_size: int = 3):
        super().__init__()
        self.conv = torch.nn.Conv2d(2 * channels, channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x_t, mu, t_frac):
        return self.conv(torch.cat([x_t, mu], dim=1))


@pytest.fixture
def linear_head():
    torch.manual_seed(0)
    return LinearHead().double()
