"""Held-out restoration experiment on synthetic phantoms and its pass/fail checks."""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import pandas as pd
import torch
from pydantic import BaseModel, Field, model_validator

from .metrics import PLANE_AXES, evaluate
from .motion import MotionSpec
from .network import Denoiser, DenoiserConfig, save_checkpoint
from .phantom import make_pairs
from .providers import DenoiserProvider
from .sampler import SamplerConfig, restore, restore_2d_baseline
from .sde import build_schedule
from .training import TrainOptions, train
from .volume import Plane, save_volume


logger = logging.getLogger(__name__)

METHODS = ("corrupted", "pseudo3d", "slice2d")


class ExperimentOptions(BaseModel):
    size: int = Field(default=32, ge=8, description="edge length of the cubic phantoms")
    n_train: int = Field(default=25, ge=1)
    n_test: int = Field(default=5, ge=1, description="held-out phantom pairs")
    steps: int = Field(default=2000, ge=0, description="optimizer steps per plane")
    T: int = Field(default=40, ge=1)
    preset: Literal["mild", "severe"] = "mild"
    block: Literal["wavelet", "plain"] = "wavelet"
    width: int = Field(default=8, ge=1)
    levels: int = Field(default=1, ge=0)
    lr: float = Field(default=1e-3, gt=0)
    runs: int = Field(default=5, ge=1, description="sampler seeds per held-out case")
    seed: int = Field(default=0, ge=0)
    min_psnr_gain: float = 2.0
    min_smoother: int = Field(default=4, ge=0, description="held-out cases where pseudo-3D must be smoother along z")
    progress: bool = False

    @model_validator(mode="after")
    def _enough_cases(self) -> "ExperimentOptions":
        if self.min_smoother > self.n_test:
            raise ValueError(f"min_smoother={self.min_smoother} exceeds n_test={self.n_test}")
        return self


def _tagged(frame: pd.DataFrame, case: int, method: str, run: int) -> pd.DataFrame:
    return frame.assign(case=case, method=method, run=run)


def train_plane_networks(pairs, sched, opts: ExperimentOptions, out_dir: Optional[Path] = None) -> Dict[Plane, Denoiser]:
    nets = {}
    for plane in (Plane.XY, Plane.XZ):
        torch.manual_seed(opts.seed)
        net = Denoiser(DenoiserConfig(width=opts.width, levels=opts.levels, block=opts.block), plane=plane)
        result = train(net, pairs, sched, TrainOptions(
            plane=plane, steps=opts.steps, lr=opts.lr, seed=opts.seed, progress=opts.progress,
        ))
        if out_dir is not None:
            save_checkpoint(net, out_dir / f"{plane.value}_net", schedule={"T": sched.T, "lambda": sched.lam})
            result.save_curve(out_dir / f"{plane.value}_loss.csv")
        nets[plane] = net
    return nets


def run_experiment(
    opts: ExperimentOptions = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[Dict[Plane, Denoiser], pd.DataFrame]:
    """
    Train both plane networks on ``n_train`` phantom pairs, then restore each
    of the ``n_test`` held-out volumes ``runs`` times with pseudo-3D and
    slice-wise 2D sampling.

    Returns the networks and a long-form metric frame with the columns of
    ``evaluate`` plus ``case``, ``method`` and ``run``.
    """
    opts = opts or ExperimentOptions()
    out_dir = Path(out_dir) if out_dir is not None else None
    spec = MotionSpec.preset(opts.preset, seed=opts.seed)
    pairs = make_pairs(opts.n_train + opts.n_test, (opts.size,) * 3, spec, seed=opts.seed)
    train_pairs, held_out = pairs[: opts.n_train], pairs[opts.n_train:]
    sched = build_schedule(T=opts.T)

    nets = train_plane_networks(train_pairs, sched, opts, out_dir)
    providers = {plane: DenoiserProvider(net, sched) for plane, net in nets.items()}

    frames = []
    for case, (clean, corrupted) in enumerate(held_out):
        frames.append(_tagged(evaluate(corrupted, clean, f"case{case}/corrupted"), case, "corrupted", 0))
        for run in range(opts.runs):
            cfg = SamplerConfig(seed=opts.seed + run)
            pseudo_3d = restore(corrupted, providers, sched, cfg)
            slice_2d = restore_2d_baseline(corrupted, providers[Plane.XY], sched, cfg)
            frames.append(_tagged(evaluate(pseudo_3d, clean, f"case{case}/pseudo3d/{run}"), case, "pseudo3d", run))
            frames.append(_tagged(evaluate(slice_2d, clean, f"case{case}/slice2d/{run}"), case, "slice2d", run))
            if out_dir is not None and run == 0:
                for name, vol in (("clean", clean), ("corrupted", corrupted), ("pseudo3d", pseudo_3d), ("slice2d", slice_2d)):
                    save_volume(vol, out_dir / f"case{case}.{name}.vol")
        logger.info("Restored held-out case %d/%d (%d runs)", case + 1, opts.n_test, opts.runs)
    return nets, pd.concat(frames, ignore_index=True)


# ============================================================================
# SUMMARIES AND CHECKS
# ============================================================================

def quality_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean PSNR/SSIM per (method, metric) row and plane column, over cases and runs."""
    rows = frame[frame.metric.isin(["psnr", "ssim"]) & frame.plane.isin(list(PLANE_AXES))]
    return rows.groupby(["method", "metric", "plane"])["value"].mean().unstack("plane")


def smoothness_table(frame: pd.DataFrame) -> pd.DataFrame:
    """z-discontinuity per held-out case and method, averaged over runs."""
    rows = frame[frame.metric == "z_discontinuity"]
    return rows.pivot_table(index="case", columns="method", values="value", aggfunc="mean")


def acceptance_failures(frame: pd.DataFrame, opts: ExperimentOptions = None) -> List[str]:
    """Human-readable reasons the held-out results miss their targets; empty when they pass."""
    opts = opts or ExperimentOptions()
    quality = quality_table(frame)
    failures = []
    for plane in PLANE_AXES:
        gain = quality.loc[("pseudo3d", "psnr"), plane] - quality.loc[("corrupted", "psnr"), plane]
        if gain < opts.min_psnr_gain:
            failures.append(f"{plane}: PSNR gain {gain:.2f} dB is below {opts.min_psnr_gain} dB")
        before, after = quality.loc[("corrupted", "ssim"), plane], quality.loc[("pseudo3d", "ssim"), plane]
        if not after > before:
            failures.append(f"{plane}: SSIM {after:.4f} does not improve on {before:.4f}")

    smooth = smoothness_table(frame)
    smoother = int((smooth["pseudo3d"] <= smooth["slice2d"]).sum())
    if smoother < opts.min_smoother:
        failures.append(
            f"pseudo-3D is at most as discontinuous along z as 2D in {smoother}/{len(smooth)} cases, "
            f"need {opts.min_smoother}"
        )
    for reason in failures:
        logger.warning("Check failed: %s", reason)
    return failures
