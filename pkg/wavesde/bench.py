"""Per-step sampler timing with and without wavelet-domain execution."""

import logging
import time
from typing import List, Literal

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field

from .domain import volume_tensor
from .errors import ConfigurationError
from .network import Denoiser, DenoiserConfig
from .providers import DenoiserProvider
from .rng import substream
from .sampler import SamplerConfig, reverse_step
from .sde import build_schedule
from .volume import Plane, Volume


logger = logging.getLogger(__name__)

COLUMNS = ["slice_size", "mode", "steps", "mean_ms", "std_ms", "median_ms"]


class BenchOptions(BaseModel):
    sizes: List[int] = [64, 128, 240]
    modes: List[Literal["wavelet", "image"]] = ["wavelet", "image"]
    depth: int = Field(default=8, ge=2, description="number of XY slices in the timed volume")
    steps: int = Field(default=50, ge=1, description="timed reverse steps per size and mode")
    warmup: int = Field(default=1, ge=0)
    width: int = Field(default=8, ge=1)
    levels: int = Field(default=1, ge=0)
    seed: int = Field(default=0, ge=0)


def _time_mode(size: int, mode: str, opts: BenchOptions) -> List[float]:
    torch.manual_seed(opts.seed)
    net = Denoiser(DenoiserConfig(wavelet=mode == "wavelet", width=opts.width, levels=opts.levels), plane=Plane.XY)
    sched = build_schedule(T=opts.steps + opts.warmup + 1)
    provider = DenoiserProvider(net, sched)
    multiple = provider.required_multiple * (2 if mode == "wavelet" else 1)
    if size % multiple:
        raise ConfigurationError(f"slice size {size} is not a multiple of {multiple} for the {mode} network")

    data = substream(opts.seed, "bench", size).random((size, size, opts.depth))
    vol = volume_tensor(Volume(data))
    cfg = SamplerConfig(seed=opts.seed, wavelet=mode == "wavelet")

    timings = []
    W = vol
    for i in range(opts.warmup + opts.steps):
        t = sched.T - i
        started = time.perf_counter()
        W = reverse_step(W, vol, t, Plane.XY, provider, sched, cfg)
        if i >= opts.warmup:
            timings.append((time.perf_counter() - started) * 1000.0)
    return timings


def bench_sampler(opts: BenchOptions = None) -> pd.DataFrame:
    opts = opts or BenchOptions()
    rows = []
    for size in opts.sizes:
        for mode in opts.modes:
            timings = np.asarray(_time_mode(size, mode, opts))
            rows.append({
                "slice_size": size,
                "mode": mode,
                "steps": len(timings),
                "mean_ms": float(timings.mean()),
                "std_ms": float(timings.std()),
                "median_ms": float(np.median(timings)),
            })
            logger.info("%4d^2 %-7s %.1f ms/step", size, mode, rows[-1]["mean_ms"])
    return pd.DataFrame(rows, columns=COLUMNS)
