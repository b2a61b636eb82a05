"""Forward noising, the large-step reverse posterior, and the sampler.

The forward chain multiplies signal by sqrt(1 - gamma_t) and adds gamma_t
Gaussian noise per grid step, so the marginal at time t is
N(sqrt(alpha_bar_t) x0, (1 - alpha_bar_t) I). Conditioning on a clean-image
estimate, Bayes' rule gives the reverse transition over one large step as a
Gaussian whose mean mixes the estimate and the current sample:

    mean = sqrt(alpha_bar_{t-k}) gamma_t / (1 - alpha_bar_t) * x0_est
         + sqrt(alpha_t) (1 - alpha_bar_{t-k}) / (1 - alpha_bar_t) * x_t
    var  = gamma_t (1 - alpha_bar_{t-k}) / (1 - alpha_bar_t)

(The x0 coefficient uses the current step's gamma_t; a grid-quadrature Bayes
oracle in the test suite pins this against the alternative reading.) At
t == k the transition collapses to a point mass on x0_est, which makes the
final step of the sampler deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .schedule import FastSchedule, ScheduleError


@dataclass
class PosteriorParams:
    """Gaussian parameters of one reverse step; variance is a plain scalar."""

    mean: T.Tensor
    variance: float


def _as_tensor(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def _noise_like(data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(data.shape).astype(data.dtype)


def forward_step(x_prev, t: int, schedule: FastSchedule, rng: np.random.Generator) -> T.Tensor:
    """One forward noising step from time t-k to t."""
    x_prev = _as_tensor(x_prev)
    g = schedule.gamma(t)
    eps = _noise_like(x_prev.data, rng)
    out = T.mul_scalar(x_prev, math.sqrt(1.0 - g))
    return T.add(out, T.Tensor(eps * x_prev.data.dtype.type(math.sqrt(g))))


def forward_marginal(x0, t: int, schedule: FastSchedule, rng: np.random.Generator) -> T.Tensor:
    """Sample x_t directly from the closed-form marginal given the clean image."""
    x0 = _as_tensor(x0)
    ab = schedule.alpha_bar(t)
    eps = _noise_like(x0.data, rng)
    out = T.mul_scalar(x0, math.sqrt(ab))
    return T.add(out, T.Tensor(eps * x0.data.dtype.type(math.sqrt(1.0 - ab))))


def posterior_params(x_t, x0_est, t: int, schedule: FastSchedule) -> PosteriorParams:
    """Reverse-transition Gaussian for one large step, conditioned on a clean estimate."""
    x_t = _as_tensor(x_t)
    x0_est = _as_tensor(x0_est)
    if x_t.shape != x0_est.shape:
        raise T.ShapeError("posterior_params", f"x_t {x_t.shape} vs x0_est {x0_est.shape}")
    k = schedule.k
    g_t = schedule.gamma(t)
    if t == k:
        # alpha_bar_0 = 1 collapses the mixture onto the estimate.
        return PosteriorParams(mean=x0_est, variance=0.0)
    a_t = schedule.alpha(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - k)
    c_est = math.sqrt(ab_prev) * g_t / (1.0 - ab_t)
    c_cur = math.sqrt(a_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = g_t * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = T.add(T.mul_scalar(x0_est, c_est), T.mul_scalar(x_t, c_cur))
    return PosteriorParams(mean=mean, variance=var)


def posterior_sample(p: PosteriorParams, rng: np.random.Generator) -> T.Tensor:
    """Reparameterized draw: mean + sqrt(var) * eps; exact mean when var == 0."""
    if p.variance == 0.0:
        return p.mean
    eps = _noise_like(p.mean.data, rng)
    return T.add(p.mean, T.Tensor(eps * p.mean.data.dtype.type(math.sqrt(p.variance))))


def reverse_sample(
    gen: Callable,
    y,
    schedule: FastSchedule,
    rng: np.random.Generator,
    on_step: Callable[[int], None] | None = None,
) -> T.Tensor:
    """Run the full reverse chain: noise in, translated image out.

    `gen` maps (x_t, y, t) to a clean-image estimate and is invoked exactly
    T/k times. All stochasticity comes from the initial noise sample and the
    per-step posterior draws; the chain runs detached from the tape.
    """
    y = _as_tensor(y)
    with T.no_grad():
        x = T.Tensor(_noise_like(y.data, rng))
        for t in reversed(schedule.grid):
            x0_est = gen(x, y, t)
            x = posterior_sample(posterior_params(x, x0_est, t, schedule), rng)
            if on_step is not None:
                on_step(t)
    return x


def ddpm_mean(eps_net: Callable, x_t, t: int, schedule: FastSchedule) -> T.Tensor:
    """Posterior mean of the unit-step baseline from a noise-prediction net.

        mean = (x_t - gamma_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)

    `eps_net` maps (x_t, t) to the noise estimate (any conditioning is baked
    in by the caller). Ancestral sampling adds sqrt(gamma_t) noise on top,
    suppressed at t=1. Requires a unit-step schedule.
    """
    if schedule.k != 1:
        raise ScheduleError(f"unit-step schedule required, got k={schedule.k}")
    x_t = _as_tensor(x_t)
    g_t = schedule.gamma(t)
    a_t = schedule.alpha(t)
    ab_t = schedule.alpha_bar(t)
    eps_hat = _as_tensor(eps_net(x_t, t))
    if eps_hat.shape != x_t.shape:
        raise T.ShapeError("ddpm_mean", f"eps estimate {eps_hat.shape} vs x_t {x_t.shape}")
    inner = T.sub(x_t, T.mul_scalar(eps_hat, g_t / math.sqrt(1.0 - ab_t)))
    return T.mul_scalar(inner, 1.0 / math.sqrt(a_t))
