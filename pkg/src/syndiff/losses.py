"""Training objectives: adversarial pieces, cycle consistency, totals,
and the unit-step noise-prediction baseline loss.

All log-sigmoid terms go through softplus identities, so every loss stays
finite for any logit the discriminators can realistically produce:

    -log(sigmoid(z))     = softplus(-z)
    -log(1 - sigmoid(z)) = softplus(z)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .schedule import FastSchedule, ScheduleError
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 0.5
    gp_weight: float = 0.5

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.gp_weight < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


def loss_g_adv(d_logits_on_fake: Tensor) -> Tensor:
    """Non-saturating generator loss: mean of -log(sigmoid(logit))."""
    return T.mean(T.softplus(T.neg(d_logits_on_fake)))


def loss_d_adv(
    d_logits_real: Tensor,
    d_logits_fake: Tensor,
    grad_penalty_term: Tensor | None = None,
    gp_weight: float = 0.0,
) -> Tensor:
    """Discriminator loss with optional squared-gradient penalty on real samples."""
    out = T.add(T.mean(T.softplus(T.neg(d_logits_real))), T.mean(T.softplus(d_logits_fake)))
    if grad_penalty_term is not None and gp_weight != 0.0:
        out = T.add(out, T.mul_scalar(T.mean(grad_penalty_term), gp_weight))
    return out


def _mean_l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise T.ShapeError("loss_cycle", f"shape mismatch {a.shape} vs {b.shape}")
    return T.mean(T.abs_(T.sub(a, b)))


def loss_cycle(x0_a, x0_b, recon_nondiff_a, recon_nondiff_b, recon_diff_a, recon_diff_b) -> Tensor:
    """Sum of four per-pixel-mean L1 reconstruction terms (both cycle families)."""
    out = T.add(_mean_l1(x0_a, recon_nondiff_a), _mean_l1(x0_b, recon_nondiff_b))
    return T.add(out, T.add(_mean_l1(x0_a, recon_diff_a), _mean_l1(x0_b, recon_diff_b)))


def total_g(loss_g_diff_a, loss_g_diff_b, loss_g_nd_a, loss_g_nd_b, cyc, lambda_cyc: float) -> Tensor:
    adv = T.add(T.add(loss_g_diff_a, loss_g_diff_b), T.add(loss_g_nd_a, loss_g_nd_b))
    return T.add(adv, T.mul_scalar(cyc, lambda_cyc))


def total_d(loss_d_diff_a, loss_d_diff_b, loss_d_nd_a, loss_d_nd_b) -> Tensor:
    return T.add(T.add(loss_d_diff_a, loss_d_diff_b), T.add(loss_d_nd_a, loss_d_nd_b))


def ddpm_eps_loss(eps_net, x0, y, schedule: FastSchedule, rng: np.random.Generator) -> Tensor:
    """Noise-prediction objective for the unit-step baseline.

    Draws t uniformly from the grid and eps from a standard normal, then
    scores ||eps - eps_net(x_t, y, t)||^2 summed per sample and averaged
    over the batch. `eps_net` maps (x_t, y, t) to a noise estimate.
    """
    if schedule.k != 1:
        raise ScheduleError(f"unit-step schedule required, got k={schedule.k}")
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    t = int(rng.integers(1, schedule.T + 1))
    ab = schedule.alpha_bar(t)
    eps = rng.standard_normal(x0.shape).astype(x0.data.dtype)
    x_t = T.add(T.mul_scalar(x0, math.sqrt(ab)), Tensor(eps * x0.data.dtype.type(math.sqrt(1.0 - ab))))
    diff = T.sub(Tensor(eps), eps_net(x_t, y, t))
    n = x0.shape[0] if x0.ndim > 1 else 1
    per_sample = T.sum_(T.reshape(T.mul(diff, diff), (n, -1)), axis=1)
    return T.mean(per_sample)
