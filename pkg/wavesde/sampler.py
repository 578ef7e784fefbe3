"""Alternating-plane reverse diffusion over a volume.

Each step picks one plane, scores every slice of that plane with the plane's
provider and replaces the working volume by the posterior draw. Steps are
strictly sequential; within a step the volume is read once and written once.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from .domain import clamp_bounds, from_domain, to_domain, volume_tensor
from .errors import ConfigurationError, NumericError, StepError
from .providers import ExactNoiseProvider, NoiseProvider, NoiseStore
from .rng import substream
from .sde import DEFAULT_CLAMP, NoiseSchedule, estimate_x0, forward_marginal, posterior_step, posterior_variance
from .volume import Plane, Volume, save_volume


logger = logging.getLogger(__name__)


class SamplerConfig(BaseModel):
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    beta: float = Field(default=0.5, ge=0.0, le=1.0)
    alternation: Literal["deterministic_mod2", "probabilistic"] = "deterministic_mod2"
    clamp: Tuple[float, float] = DEFAULT_CLAMP
    seed: int = Field(default=0, ge=0)
    wavelet: bool = True
    chunk_size: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_weights(self) -> "SamplerConfig":
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha} + {self.beta}")
        if self.alternation == "deterministic_mod2" and abs(self.alpha - 0.5) > 1e-9:
            raise ValueError("deterministic_mod2 alternation implies alpha = beta = 0.5")
        if self.clamp[0] >= self.clamp[1]:
            raise ValueError(f"clamp range must be increasing, got {self.clamp}")
        return self


@dataclass(frozen=True)
class StepProgress:
    step: int
    plane: Plane
    elapsed: float


ProgressCallback = Callable[[StepProgress], None]


def choose_plane(t: int, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None) -> Plane:
    if t < 1:
        raise StepError(f"step must be >= 1, got {t}")
    if cfg.alternation == "deterministic_mod2":
        return Plane.XY if t % 2 == 0 else Plane.XZ
    if rng is None:
        raise ConfigurationError("probabilistic alternation needs a random generator")
    return Plane.XY if rng.random() < cfg.alpha / (cfg.alpha + cfg.beta) else Plane.XZ


def _provider_for(providers: Mapping[Plane, NoiseProvider], plane: Plane, cfg: SamplerConfig) -> NoiseProvider:
    provider = providers.get(plane)
    if provider is None:
        raise ConfigurationError(f"no noise provider for the {plane.value} plane")
    if provider.wavelet != cfg.wavelet:
        domain = "wavelet" if cfg.wavelet else "image"
        raise ConfigurationError(f"{plane.value} provider does not work in the {domain} domain")
    return provider


def _check_strides(vT: Volume, providers: Mapping[Plane, NoiseProvider], cfg: SamplerConfig) -> None:
    for plane, provider in providers.items():
        multiple = getattr(provider, "required_multiple", 1) * (2 if cfg.wavelet else 1)
        h, w = vT.slice_shape(Plane(plane))
        if h % multiple or w % multiple:
            raise ConfigurationError(
                f"{Plane(plane).value} slices {h}x{w} are not divisible by the network stride {multiple}"
            )


def _slice_noise(seed: int, t: int, plane: Plane, rows: range, shape) -> torch.Tensor:
    draws = [substream(seed, t, plane.value, i).standard_normal(tuple(shape)) for i in rows]
    return torch.from_numpy(np.stack(draws))


def reverse_step(
    W: torch.Tensor,
    cond: torch.Tensor,
    t: int,
    plane: Plane,
    provider: NoiseProvider,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
) -> torch.Tensor:
    """One posterior update of every slice of ``plane``; returns the new volume."""
    x = to_domain(W, plane, cfg.wavelet)
    mu = to_domain(cond, plane, cfg.wavelet)
    bounds = clamp_bounds(*cfg.clamp, wavelet=cfg.wavelet)
    stochastic = posterior_variance(t, sched) > 0.0
    n = x.shape[0]
    chunk = cfg.chunk_size or n
    out = torch.empty_like(x)
    for start in range(0, n, chunk):
        rows = range(start, min(n, start + chunk))
        x_t, m = x[rows.start:rows.stop], mu[rows.start:rows.stop]
        eps = provider.predict(x_t, m, t, plane, rows)
        if tuple(eps.shape) != tuple(x_t.shape):
            raise ConfigurationError(
                f"{plane.value} provider returned shape {tuple(eps.shape)} for input {tuple(x_t.shape)}"
            )
        if not torch.all(torch.isfinite(eps)):
            raise NumericError(f"provider returned non-finite noise at step {t} ({plane.value})")
        x0_hat = estimate_x0(x_t, m, eps, t, sched, clamp=bounds)
        noise = _slice_noise(cfg.seed, t, plane, rows, x_t.shape[1:]).to(x_t) if stochastic else None
        out[rows.start:rows.stop] = posterior_step(x_t, x0_hat, m, t, sched, noise=noise)
    return from_domain(out, plane, cfg.wavelet)


def restore(
    vT: Volume,
    providers: Mapping[Union[Plane, str], NoiseProvider],
    sched: NoiseSchedule,
    cfg: Optional[SamplerConfig] = None,
    progress: Optional[ProgressCallback] = None,
    dump_dir: Optional[Union[str, Path]] = None,
    dump_every: int = 10,
    show_progress: bool = False,
) -> Volume:
    cfg = cfg or SamplerConfig()
    providers = {Plane(p): prov for p, prov in providers.items()}
    _check_strides(vT, providers, cfg)

    cond = volume_tensor(vT)
    W, _ = forward_marginal(cond, cond, sched.T, sched, rng=substream(cfg.seed, "init"))
    logger.debug("Restoring %s volume over %d steps (%s)", vT.dims, sched.T, cfg.alternation)

    started = time.perf_counter()
    usage = {Plane.XY: 0, Plane.XZ: 0}
    for t in tqdm(range(sched.T, 0, -1), desc="restore", disable=not show_progress):
        plane = choose_plane(t, cfg, substream(cfg.seed, t, "plane"))
        provider = _provider_for(providers, plane, cfg)
        W = reverse_step(W, cond, t, plane, provider, sched, cfg)
        usage[plane] += 1
        if progress is not None:
            progress(StepProgress(step=t, plane=plane, elapsed=time.perf_counter() - started))
        if dump_dir is not None and (t % dump_every == 0 or t == 1):
            save_volume(Volume(W.cpu().numpy()), Path(dump_dir) / f"step_{t:04d}.vol")

    logger.info(
        "Restored %s volume in %.2fs (xy steps %d, xz steps %d)",
        vT.dims, time.perf_counter() - started, usage[Plane.XY], usage[Plane.XZ],
    )
    return Volume(W.clamp(0.0, 1.0).cpu().numpy())


def restore_2d_baseline(
    vT: Volume,
    provider_xy: NoiseProvider,
    sched: NoiseSchedule,
    cfg: Optional[SamplerConfig] = None,
    **kwargs,
) -> Volume:
    """Slice-wise restoration: every step uses the XY plane."""
    cfg = (cfg or SamplerConfig()).model_copy(update={"alpha": 1.0, "beta": 0.0, "alternation": "probabilistic"})
    return restore(vT, {Plane.XY: provider_xy}, sched, cfg, **kwargs)


def record_oracle_noise(v0: Volume, vT: Volume, sched: NoiseSchedule, cfg: Optional[SamplerConfig] = None) -> NoiseStore:
    """Run the sampler with a provider that knows ``v0`` and keep every noise it returned."""
    cfg = cfg or SamplerConfig()
    if v0.dims != vT.dims:
        raise ConfigurationError(f"clean volume {v0.dims} does not match corrupted volume {vT.dims}")
    store = NoiseStore()
    exact = ExactNoiseProvider(v0, sched, wavelet=cfg.wavelet, store=store)
    restore(vT, {Plane.XY: exact, Plane.XZ: exact}, sched, cfg)
    logger.info("Recorded %d oracle noise slices", len(store))
    return store
