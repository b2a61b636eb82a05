"""Noise schedule for the large-step diffusion process.

The per-step noise variance follows an exponential variance-preserving
schedule evaluated on the coarse time grid {k, 2k, ..., T}:

    gamma_t = 1 - exp(beta_min * k/T - (beta_max - beta_min) * (2tk - k^2) / (2 T^2))

alpha_t = 1 - gamma_t, and alpha_bar_t is the running product of alpha over
the grid with alpha_bar_0 defined as 1 (the t=0 sample is the clean image;
the exponent turns positive as t approaches 0, so the grid starts at k).
A k=1 instance of the same construction serves as the small-step baseline
schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    """Schedule parameters produce an invalid noise variance; carries the offending t."""

    def __init__(self, msg: str, t: int | None = None):
        super().__init__(msg)
        self.t = t


@dataclass(frozen=True, eq=False)
class FastSchedule:
    """Precomputed noise variances and cumulative products; immutable after build."""

    T: int
    k: int
    beta_min: float
    beta_max: float
    _gamma: np.ndarray = field(repr=False)
    _alpha_bar: np.ndarray = field(repr=False)  # index 0 holds alpha_bar_0 = 1

    @property
    def grid(self) -> tuple[int, ...]:
        """Time grid (k, 2k, ..., T)."""
        return tuple(range(self.k, self.T + 1, self.k))

    @property
    def num_steps(self) -> int:
        return self.T // self.k

    def _index(self, t: int) -> int:
        if t < self.k or t > self.T or t % self.k != 0:
            raise ScheduleError(f"t={t} is off the schedule grid {{{self.k}, {2 * self.k}, ..., {self.T}}}", t=t)
        return t // self.k

    def gamma(self, t: int) -> float:
        return float(self._gamma[self._index(t)])

    def alpha(self, t: int) -> float:
        return 1.0 - self.gamma(t)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self._alpha_bar[self._index(t)])


def build_fast_schedule(T: int, k: int, beta_min: float, beta_max: float) -> FastSchedule:
    """Construct the schedule, rejecting any parameter set with gamma outside (0, 1)."""
    if T <= 0 or k <= 0:
        raise ScheduleError(f"T={T} and k={k} must be positive")
    if T % k != 0:
        raise ScheduleError(f"step size k={k} does not divide T={T}")
    if not beta_min < beta_max:
        raise ScheduleError(f"need beta_min < beta_max, got ({beta_min}, {beta_max})")

    ts = np.arange(k, T + 1, k, dtype=np.float64)
    exponent = beta_min * k / T - (beta_max - beta_min) * (2.0 * ts * k - k * k) / (2.0 * T * T)
    gamma = 1.0 - np.exp(exponent)
    bad = np.flatnonzero((gamma <= 0.0) | (gamma >= 1.0))
    if bad.size:
        t_bad = int(ts[bad[0]])
        raise ScheduleError(
            f"gamma_t={gamma[bad[0]]:.6g} outside (0, 1) at t={t_bad} "
            f"for (T={T}, k={k}, beta_min={beta_min}, beta_max={beta_max})",
            t=t_bad,
        )
    if np.any(np.diff(gamma) <= 0.0):
        raise ScheduleError("gamma_t is not strictly increasing")  # unreachable for this family

    gamma = np.concatenate([[np.nan], gamma])  # 1-based by step index
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - gamma[1:])])
    return FastSchedule(T=int(T), k=int(k), beta_min=float(beta_min), beta_max=float(beta_max), _gamma=gamma, _alpha_bar=alpha_bar)


def regular_schedule(T: int, beta_min: float, beta_max: float) -> FastSchedule:
    """Unit-step instance of the same schedule (small-step diffusion baseline)."""
    return build_fast_schedule(T, 1, beta_min, beta_max)
