"""Mean-reverting SDE: noise schedule, forward marginals, posterior reverse steps.

Discrete convention: step ``t`` runs from ``t - 1`` to ``t`` with unit length,
so ``theta_prime[t] == theta[t]`` and ``theta_bar`` is the prefix sum with
``theta_bar[0] == 0``. The volatility obeys ``sigma_t^2 = 2 lambda^2 theta_t``,
which makes the terminal law ``N(mu, lambda^2)``.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch

from .errors import DimensionError, ParameterError, StepError


logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 50.0 / 255.0
DEFAULT_TERMINAL = 5e-5
DEFAULT_CLAMP = (-0.1, 1.1)

Bound = Union[float, torch.Tensor]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step tables indexed by t in [0, T]; index 0 of theta is unused."""

    T: int
    lam: float
    theta: np.ndarray
    theta_bar: np.ndarray
    v: np.ndarray
    kind: str = "cosine"

    @property
    def theta_prime(self) -> np.ndarray:
        return self.theta

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(2.0 * self.lam ** 2 * self.theta)

    def decay(self, t: int) -> float:
        """e^{-theta_bar_t}: how much of x0 - mu survives at step t."""
        return math.exp(-self.theta_bar[t])

    def std(self, t: int) -> float:
        return math.sqrt(self.v[t])

    def posterior_coefficients(self, t: int) -> Tuple[float, float]:
        """Weights of (x_t - mu) and (x0 - mu) in the posterior mean."""
        one_minus_bar = -math.expm1(-2.0 * self.theta_bar[t])
        one_minus_prev = -math.expm1(-2.0 * self.theta_bar[t - 1])
        one_minus_step = -math.expm1(-2.0 * self.theta_prime[t])
        c_xt = one_minus_prev / one_minus_bar * math.exp(-self.theta_prime[t])
        c_x0 = one_minus_step / one_minus_bar * math.exp(-self.theta_bar[t - 1])
        return c_xt, c_x0

    def posterior_beta(self, t: int) -> float:
        """Unit-lambda posterior variance."""
        one_minus_bar = -math.expm1(-2.0 * self.theta_bar[t])
        one_minus_prev = -math.expm1(-2.0 * self.theta_bar[t - 1])
        one_minus_step = -math.expm1(-2.0 * self.theta_prime[t])
        return one_minus_prev * one_minus_step / one_minus_bar

    def to_json(self) -> str:
        return json.dumps({
            "T": self.T,
            "lambda": self.lam,
            "kind": self.kind,
            "theta_bar": self.theta_bar.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        payload = json.loads(text)
        theta_bar = np.asarray(payload["theta_bar"], dtype=np.float64)
        return _from_theta_bar(theta_bar, float(payload["lambda"]), payload.get("kind", "cosine"))


def _from_theta_bar(theta_bar: np.ndarray, lam: float, kind: str) -> NoiseSchedule:
    theta = np.zeros_like(theta_bar)
    theta[1:] = np.diff(theta_bar)
    v = lam ** 2 * -np.expm1(-2.0 * theta_bar)
    for table in (theta, theta_bar, v):
        table.setflags(write=False)
    return NoiseSchedule(T=len(theta_bar) - 1, lam=lam, theta=theta, theta_bar=theta_bar, v=v, kind=kind)


def build_schedule(
    T: int = 100,
    lam: float = DEFAULT_LAMBDA,
    kind: str = "cosine",
    terminal: float = DEFAULT_TERMINAL,
    s: float = 0.008,
) -> NoiseSchedule:
    """
    Cosine schedule: e^{-2 theta_bar_t} follows a cosine decay from 1 at t=0
    down to ``terminal`` at t=T.
    """
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    if not lam > 0:
        raise ParameterError(f"lambda must be > 0, got {lam}")
    if not 0 < terminal <= 1e-4:
        raise ParameterError(f"terminal decay must lie in (0, 1e-4], got {terminal}")
    if kind != "cosine":
        raise ParameterError(f"unknown schedule kind {kind!r}")

    steps = np.arange(T + 1, dtype=np.float64)
    shape = np.cos((steps / T + s) / (1 + s) * math.pi * 0.5) ** 2
    shape = shape / shape[0]
    alpha_bar = terminal + (1.0 - terminal) * shape
    theta_bar = -0.5 * np.log(alpha_bar)
    theta_bar[0] = 0.0
    theta_bar[-1] = -0.5 * math.log(terminal)

    if not np.all(np.diff(theta_bar) > 0):
        raise ParameterError(f"T={T} gives a non-increasing cosine schedule")

    sched = _from_theta_bar(theta_bar, float(lam), kind)
    logger.debug("Built %s schedule T=%d lambda=%.4f theta_bar_T=%.4f", kind, T, lam, theta_bar[-1])
    return sched


# ============================================================================
# STEP OPERATIONS
# ============================================================================

def _check_same_shape(**fields: torch.Tensor) -> None:
    shapes = {name: tuple(f.shape) for name, f in fields.items()}
    if len(set(shapes.values())) > 1:
        raise DimensionError(f"fields must share one shape, got {shapes}")


def _check_step(t: int, sched: NoiseSchedule, lowest: int = 1) -> None:
    if not lowest <= t <= sched.T:
        raise StepError(f"step {t} outside [{lowest}, {sched.T}]")


def _standard_normal(like: torch.Tensor, rng: Optional[np.random.Generator]) -> torch.Tensor:
    if rng is None:
        raise ParameterError("a random generator or an explicit noise field is required")
    draw = rng.standard_normal(tuple(like.shape))
    return torch.from_numpy(draw).to(dtype=like.dtype, device=like.device)


def forward_marginal(
    x0: torch.Tensor,
    mu: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Sample x_t given x0; returns the state and the exact noise draw."""
    _check_same_shape(x0=x0, mu=mu)
    _check_step(t, sched, lowest=0)
    eps = noise if noise is not None else _standard_normal(x0, rng)
    _check_same_shape(x0=x0, noise=eps)
    if t == 0:
        return x0.clone(), eps
    x_t = mu + (x0 - mu) * sched.decay(t) + sched.std(t) * eps
    return x_t, eps


def exact_noise(x_t: torch.Tensor, x0: torch.Tensor, mu: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    """The noise that explains x_t given the true x0."""
    _check_same_shape(x_t=x_t, x0=x0, mu=mu)
    _check_step(t, sched)
    return (x_t - mu - (x0 - mu) * sched.decay(t)) / sched.std(t)


def _clamp(x: torch.Tensor, clamp: Optional[Tuple[Bound, Bound]]) -> torch.Tensor:
    if clamp is None:
        return x
    lo, hi = clamp
    if isinstance(lo, torch.Tensor):
        return torch.minimum(torch.maximum(x, lo.to(x)), hi.to(x))
    return x.clamp(lo, hi)


def estimate_x0(
    x_t: torch.Tensor,
    mu: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    clamp: Optional[Tuple[Bound, Bound]] = DEFAULT_CLAMP,
) -> torch.Tensor:
    """Invert the forward marginal with predicted noise; optionally clamped."""
    _check_same_shape(x_t=x_t, mu=mu, eps_hat=eps_hat)
    _check_step(t, sched)
    x0_hat = math.exp(sched.theta_bar[t]) * (x_t - mu - sched.std(t) * eps_hat) + mu
    return _clamp(x0_hat, clamp)


def posterior_mean(x_t: torch.Tensor, x0: torch.Tensor, mu: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    _check_same_shape(x_t=x_t, x0=x0, mu=mu)
    _check_step(t, sched)
    c_xt, c_x0 = sched.posterior_coefficients(t)
    return c_xt * (x_t - mu) + c_x0 * (x0 - mu) + mu


def optimal_reverse(x_t: torch.Tensor, x0: torch.Tensor, mu: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    """Deterministic best x_{t-1} when the true x0 is known."""
    return posterior_mean(x_t, x0, mu, t, sched)


def posterior_variance(t: int, sched: NoiseSchedule) -> float:
    _check_step(t, sched)
    return sched.lam ** 2 * sched.posterior_beta(t)


def posterior_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    mu: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Draw x_{t-1} from the Gaussian posterior p(x_{t-1} | x_t, x0_hat)."""
    mean = posterior_mean(x_t, x0_hat, mu, t, sched)
    variance = posterior_variance(t, sched)
    if variance == 0.0:
        return mean
    z = noise if noise is not None else _standard_normal(mean, rng)
    _check_same_shape(mean=mean, noise=z)
    return mean + math.sqrt(variance) * z


def score_from_noise(eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    _check_step(t, sched)
    return -eps / sched.std(t)


def noise_from_score(score: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    _check_step(t, sched)
    return -score * sched.std(t)
