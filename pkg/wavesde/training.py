"""Training of the per-plane denoisers and finite-difference gradient checks."""

import copy
import logging
from pathlib import Path
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from pydantic import BaseModel, Field
from tqdm import tqdm

from .domain import to_domain, volume_tensor
from .errors import DatasetError, NumericError
from .rng import substream
from .sde import NoiseSchedule, estimate_x0, forward_marginal, optimal_reverse, posterior_mean
from .volume import Plane, Volume, load_volume


logger = logging.getLogger(__name__)

Pair = Tuple[Volume, Volume]
Predict = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class TrainOptions(BaseModel):
    plane: Plane = Plane.XY
    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=4, ge=1)
    lr: float = Field(default=1e-4, ge=0)
    betas: Tuple[float, float] = (0.9, 0.99)
    decay_every: int = Field(default=1000, ge=1, description="learning rate halves every N steps")
    norm: Literal["l1", "l2"] = "l1"
    seed: int = Field(default=0, ge=0)
    log_every: int = Field(default=50, ge=1)
    eval_size: int = Field(default=0, ge=0, description="slices in the fixed evaluation batch, 0 disables")
    eval_every: int = Field(default=10, ge=1)
    progress: bool = False


class TrainResult(BaseModel):
    plane: Plane
    steps: int
    losses: List[float]
    eval_steps: List[int] = []
    eval_losses: List[float] = []

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def eval_loss_at(self, step: int) -> float:
        """Loss on the fixed evaluation batch after ``step`` updates."""
        try:
            return self.eval_losses[self.eval_steps.index(step)]
        except ValueError:
            raise KeyError(f"no evaluation recorded at step {step}") from None

    def save_eval_curve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"step": self.eval_steps, "loss": self.eval_losses}).to_csv(path, index=False)
        return path

    def smoothed(self, window: int = 10) -> List[float]:
        return pd.Series(self.losses).rolling(window, min_periods=1).mean().tolist()

    def save_curve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"step": range(1, len(self.losses) + 1), "loss": self.losses}).to_csv(path, index=False)
        return path


class GradCheckReport(BaseModel):
    n_checked: int
    max_rel_error: float
    mean_rel_error: float
    h: float


# ============================================================================
# LOSS
# ============================================================================

def training_loss(
    predict: Predict,
    x_t: torch.Tensor,
    mu: torch.Tensor,
    x0: torch.Tensor,
    t: Union[int, Sequence[int], torch.Tensor],
    sched: NoiseSchedule,
    norm: str = "l1",
) -> torch.Tensor:
    """
    Distance between the reverse step taken with the predicted noise and
    the optimal reverse step taken with the true x0, averaged over the batch.

    ``predict(x_t, mu, steps)`` receives the integer step of every sample.
    """
    n = x_t.shape[0]
    steps = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if steps.numel() == 1:
        steps = steps.expand(n)
    eps_hat = predict(x_t, mu, steps)

    total = x_t.new_zeros(())
    for i in range(n):
        step = int(steps[i])
        x0_hat = estimate_x0(x_t[i], mu[i], eps_hat[i], step, sched, clamp=None)
        reached = posterior_mean(x_t[i], x0_hat, mu[i], step, sched)
        target = optimal_reverse(x_t[i], x0[i], mu[i], step, sched)
        diff = reached - target
        total = total + (diff.abs().mean() if norm == "l1" else (diff ** 2).mean())
    return total / n


def network_predictor(net: nn.Module, sched: NoiseSchedule) -> Predict:
    def predict(x_t, mu, steps):
        return net(x_t, mu, steps.to(x_t) / sched.T)
    return predict


# ============================================================================
# DATA
# ============================================================================

def load_pairs(directory: Union[str, Path]) -> List[Pair]:
    """Discover ``<id>.clean.vol`` / ``<id>.corrupt.vol`` pairs, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    pairs = []
    for clean_path in sorted(directory.glob("*.clean.vol")):
        name = clean_path.name[: -len(".clean.vol")]
        corrupt_path = directory / f"{name}.corrupt.vol"
        if not corrupt_path.exists():
            raise DatasetError(f"{clean_path.name} has no matching {corrupt_path.name}")
        pairs.append((load_volume(clean_path), load_volume(corrupt_path)))
    if not pairs:
        raise DatasetError(f"no *.clean.vol files in {directory}")
    logger.info("Loaded %d volume pairs from %s", len(pairs), directory)
    return pairs


class SliceSampler:
    """Draws random (x_t, mu, x0, t) training batches from one plane of paired volumes."""

    def __init__(self, pairs: Sequence[Pair], plane: Plane, sched: NoiseSchedule, wavelet: bool, rng: np.random.Generator, multiple: int = 1):
        if not pairs:
            raise DatasetError("training needs at least one (clean, corrupted) pair")
        self.sched = sched
        self.rng = rng
        self.clean, self.corrupt = [], []
        for i, (clean, corrupt) in enumerate(pairs):
            if clean.dims != corrupt.dims:
                raise DatasetError(f"pair {i} is unpaired: {clean.dims} vs {corrupt.dims}")
            h, w = clean.slice_shape(plane)
            step = multiple * (2 if wavelet else 1)
            if h % step or w % step:
                raise DatasetError(f"pair {i}: {plane.value} slices {h}x{w} are not divisible by {step}")
            self.clean.append(to_domain(volume_tensor(clean), plane, wavelet))
            self.corrupt.append(to_domain(volume_tensor(corrupt), plane, wavelet))

    def sample(
        self,
        batch_size: int,
        steps: Optional[Sequence[int]] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Draw ``batch_size`` slices. ``steps`` pins the diffusion step of each
        sample instead of drawing it uniformly from 1..T; ``rng`` replaces
        the sampler's own stream for this call.
        """
        rng = rng if rng is not None else self.rng
        if steps is not None and len(steps) != batch_size:
            raise DatasetError(f"got {len(steps)} steps for a batch of {batch_size}")
        x_t, mu, x0, drawn = [], [], [], []
        for b in range(batch_size):
            p = int(rng.integers(len(self.clean)))
            i = int(rng.integers(self.clean[p].shape[0]))
            t = int(steps[b]) if steps is not None else int(rng.integers(1, self.sched.T + 1))
            clean, cond = self.clean[p][i], self.corrupt[p][i]
            state, _ = forward_marginal(clean, cond, t, self.sched, rng=rng)
            x_t.append(state)
            mu.append(cond)
            x0.append(clean)
            drawn.append(t)
        return torch.stack(x_t), torch.stack(mu), torch.stack(x0), torch.tensor(drawn)

    def evaluation_batch(self, size: int, rng: np.random.Generator):
        """Fixed batch whose steps cover 1..T evenly, drawn from ``rng`` only."""
        steps = [1 + (i * self.sched.T) // size for i in range(size)]
        return self.sample(size, steps=steps, rng=rng)


# ============================================================================
# TRAINING LOOP
# ============================================================================

def _evaluate(predict: Predict, batch, sched: NoiseSchedule, norm: str) -> float:
    x_t, mu, x0, steps = batch
    with torch.no_grad():
        return float(training_loss(predict, x_t, mu, x0, steps, sched, norm))


def train(net: nn.Module, pairs: Sequence[Pair], sched: NoiseSchedule, opts: TrainOptions = None) -> TrainResult:
    opts = opts or TrainOptions()
    plane = Plane(opts.plane)
    if getattr(net, "plane", None) is None:
        net.plane = plane
    multiple = getattr(net, "required_multiple", 1)
    sampler = SliceSampler(pairs, plane, sched, net.config.wavelet, substream(opts.seed, "train", plane.value), multiple)
    first = next(net.parameters())
    dtype, device = first.dtype, first.device
    predict = network_predictor(net, sched)

    optimizer = torch.optim.Adam(net.parameters(), lr=opts.lr, betas=opts.betas)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=opts.decay_every, gamma=0.5)

    logger.info(
        "Training %s network: %d weights, %d steps, batch %d, lr %.2e, %s loss",
        plane.value, sum(p.numel() for p in net.parameters()), opts.steps, opts.batch_size, opts.lr, opts.norm,
    )
    evaluation = None
    if opts.eval_size:
        evaluation = tuple(
            b.to(device, dtype) if b.is_floating_point() else b
            for b in sampler.evaluation_batch(opts.eval_size, substream(opts.seed, "eval", plane.value))
        )
    eval_steps, eval_losses = [], []

    net.train()
    losses = []
    if evaluation is not None:
        eval_steps.append(0)
        eval_losses.append(_evaluate(predict, evaluation, sched, opts.norm))
    for step in tqdm(range(1, opts.steps + 1), desc=f"train {plane.value}", disable=not opts.progress):
        x_t, mu, x0, steps = (
            b.to(device, dtype) if b.is_floating_point() else b for b in sampler.sample(opts.batch_size)
        )
        loss = training_loss(predict, x_t, mu, x0, steps, sched, opts.norm)
        if not torch.isfinite(loss):
            raise NumericError(f"training loss became non-finite at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        losses.append(float(loss.detach()))
        if evaluation is not None and (step % opts.eval_every == 0 or step == opts.steps):
            eval_steps.append(step)
            eval_losses.append(_evaluate(predict, evaluation, sched, opts.norm))
        if step % opts.log_every == 0:
            logger.info("  step %d/%d  loss %.5f  lr %.2e", step, opts.steps, losses[-1], scheduler.get_last_lr()[0])
    net.eval()
    if eval_losses:
        logger.info("Evaluation loss %.5f -> %.5f on %d fixed slices", eval_losses[0], eval_losses[-1], opts.eval_size)
    return TrainResult(
        plane=plane, steps=opts.steps, losses=losses, eval_steps=eval_steps, eval_losses=eval_losses
    )


# ============================================================================
# GRADIENT CHECK
# ============================================================================

def grad_check(
    model: nn.Module,
    loss_fn: Callable[[nn.Module], torch.Tensor],
    n_weights: int = 100,
    h: float = 1e-4,
    seed: int = 0,
    atol: float = 1e-8,
) -> GradCheckReport:
    """
    Compare autograd gradients of ``loss_fn(model)`` with central differences
    on randomly chosen weights. Runs on a float64 copy of the model.
    """
    model = copy.deepcopy(model).double()
    params = [p for p in model.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)

    model.zero_grad()
    loss_fn(model).backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()

    rng = substream(seed, "grad_check")
    picks = rng.choice(total, size=min(n_weights, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    errors = []
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            view = params[k].data.view(-1)
            j = int(flat - offsets[k])
            original = float(view[j])
            view[j] = original + h
            up = float(loss_fn(model))
            view[j] = original - h
            down = float(loss_fn(model))
            view[j] = original
            numeric = (up - down) / (2 * h)
            a = float(analytic[flat])
            errors.append(abs(a - numeric) / max(abs(a) + abs(numeric), atol))

    report = GradCheckReport(
        n_checked=len(errors), max_rel_error=max(errors), mean_rel_error=float(np.mean(errors)), h=h
    )
    logger.info("Gradient check on %d weights: max relative error %.2e", report.n_checked, report.max_rel_error)
    return report
