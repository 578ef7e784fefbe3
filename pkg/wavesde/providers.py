"""Noise providers: everything the sampler can ask for a noise estimate.

A provider receives a batch of consecutive slices of one plane, already
mapped to its domain, and returns a noise field of the same shape::

    eps_hat = provider.predict(x_t, mu, t, plane, slices)

``slices`` is the ``range`` of slice indices covered by the batch. Only the
oracle harness looks at it; the other providers are slice-agnostic.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Protocol, Tuple, Union, runtime_checkable

import numpy as np
import torch

from .domain import to_domain, volume_tensor
from .errors import DimensionError, OracleLookupError, ParameterError
from .sde import NoiseSchedule, exact_noise
from .volume import Plane, Volume


logger = logging.getLogger(__name__)


@runtime_checkable
class NoiseProvider(Protocol):
    wavelet: bool

    def predict(
        self,
        x_t: torch.Tensor,
        mu: torch.Tensor,
        t: int,
        plane: Plane,
        slices: range,
    ) -> torch.Tensor:
        ...


# ============================================================================
# ORACLE HARNESS
# ============================================================================

class NoiseStore:
    """Exact noise per (step, plane, slice), savable as an ``.npz`` archive."""

    def __init__(self):
        self._entries: Dict[Tuple[int, str, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        t, plane, index = key
        return (int(t), Plane(plane).value, int(index)) in self._entries

    def record(self, t: int, plane: Plane, slices: range, eps: torch.Tensor) -> None:
        if eps.shape[0] != len(slices):
            raise DimensionError(f"{len(slices)} slices but a batch of {eps.shape[0]}")
        values = eps.detach().cpu().numpy()
        for row, index in enumerate(slices):
            self._entries[(int(t), Plane(plane).value, int(index))] = values[row].copy()

    def lookup(self, t: int, plane: Plane, slices: range) -> np.ndarray:
        plane = Plane(plane)
        rows = []
        for index in slices:
            key = (int(t), plane.value, int(index))
            if key not in self._entries:
                raise OracleLookupError(f"no noise recorded for step {t}, plane {plane.value}, slice {index}")
            rows.append(self._entries[key])
        return np.stack(rows)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f"t{t}_{plane}_{index}": value for (t, plane, index), value in self._entries.items()}
        np.savez_compressed(path, **arrays)
        logger.info("Saved %d oracle noise entries to %s", len(self), path)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NoiseStore":
        store = cls()
        with np.load(Path(path)) as archive:
            for name in archive.files:
                t, plane, index = name[1:].split("_")
                store._entries[(int(t), plane, int(index))] = archive[name]
        return store


class OracleProvider:
    """Replays recorded noise. Unrecorded queries fail loudly."""

    def __init__(self, store: NoiseStore, wavelet: bool = True):
        self.store = store
        self.wavelet = wavelet

    def predict(self, x_t, mu, t, plane, slices):
        eps = self.store.lookup(t, plane, slices)
        if eps.shape != tuple(x_t.shape):
            raise OracleLookupError(
                f"recorded noise has shape {eps.shape}, the query has {tuple(x_t.shape)}"
            )
        return torch.from_numpy(eps).to(dtype=x_t.dtype, device=x_t.device)


class ExactNoiseProvider:
    """
    Knows the clean volume and returns the noise that explains ``x_t``.

    When given a store, every answer is recorded so the run can be replayed
    later by an ``OracleProvider``.
    """

    def __init__(self, clean: Volume, sched: NoiseSchedule, wavelet: bool = True, store: Optional[NoiseStore] = None):
        self.clean = volume_tensor(clean)
        self.sched = sched
        self.wavelet = wavelet
        self.store = store

    def predict(self, x_t, mu, t, plane, slices):
        x0 = to_domain(self.clean.to(x_t), plane, self.wavelet)[slices.start:slices.stop]
        eps = exact_noise(x_t, x0, mu, t, self.sched)
        if self.store is not None:
            self.store.record(t, plane, slices, eps)
        return eps


# ============================================================================
# ANALYTIC GAUSSIAN PRIOR
# ============================================================================

class GaussianProvider:
    """
    Exact noise estimate for data drawn voxel-wise from N(m, s2).

    The marginal at step t is N(mu + (m - mu) e^{-theta_bar}, s2 e^{-2 theta_bar} + v_t)
    and ``eps_hat = sqrt(v_t) (x_t - mean) / variance``. The Haar transform is
    orthonormal, so in the wavelet domain only the mean changes: a constant
    image m has LL = 2m and zero detail bands.
    """

    def __init__(self, mean: Union[float, Volume], s2: float, sched: NoiseSchedule, wavelet: bool = True):
        if s2 < 0:
            raise ParameterError(f"prior variance must be >= 0, got {s2}")
        self.mean = mean if isinstance(mean, Volume) else float(mean)
        self.s2 = float(s2)
        self.sched = sched
        self.wavelet = wavelet

    def _prior_mean(self, like: torch.Tensor, plane: Plane, slices: range) -> torch.Tensor:
        if isinstance(self.mean, Volume):
            field = to_domain(volume_tensor(self.mean).to(like), plane, self.wavelet)
            return field[slices.start:slices.stop]
        if not self.wavelet:
            return torch.full_like(like, self.mean)
        field = torch.zeros_like(like)
        field[:, 0::4] = 2.0 * self.mean
        return field

    def marginal(self, mu: torch.Tensor, prior_mean: torch.Tensor, t: int) -> Tuple[torch.Tensor, float]:
        decay = self.sched.decay(t)
        mean = mu + (prior_mean - mu) * decay
        variance = self.s2 * decay ** 2 + self.sched.v[t]
        return mean, variance

    def predict(self, x_t, mu, t, plane, slices):
        mean, variance = self.marginal(mu, self._prior_mean(x_t, plane, slices), t)
        return self.sched.std(t) * (x_t - mean) / variance

    def log_density(self, x_t: torch.Tensor, mu: torch.Tensor, t: int, plane: Plane = Plane.XY, slices: range = None) -> torch.Tensor:
        slices = slices if slices is not None else range(x_t.shape[0])
        mean, variance = self.marginal(mu, self._prior_mean(x_t, plane, slices), t)
        return -0.5 * (x_t - mean) ** 2 / variance - 0.5 * np.log(2 * np.pi * variance)


# ============================================================================
# TRAINED DENOISER
# ============================================================================

class DenoiserProvider:
    """Wraps a per-plane ``Denoiser`` network for inference."""

    def __init__(self, net, sched: NoiseSchedule, device=None):
        self.net = net.eval()
        self.sched = sched
        self.wavelet = net.config.wavelet
        self.device = device if device is not None else next(net.parameters()).device

    @property
    def required_multiple(self) -> int:
        return self.net.required_multiple

    def predict(self, x_t, mu, t, plane, slices):
        if getattr(self.net, "plane", None) not in (None, Plane(plane)):
            logger.warning("Network trained on %s is scoring %s slices", self.net.plane.value, Plane(plane).value)
        dtype = next(self.net.parameters()).dtype
        t_frac = torch.full((x_t.shape[0],), t / self.sched.T, dtype=dtype, device=self.device)
        with torch.no_grad():
            eps = self.net(x_t.to(self.device, dtype), mu.to(self.device, dtype), t_frac)
        return eps.to(device=x_t.device, dtype=x_t.dtype)
