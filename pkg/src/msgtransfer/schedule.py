"""Variance-preserving noise schedule with a linear continuous-time beta.

beta(t) = beta_min + t (beta_max - beta_min) on t in [0, 1], and the
signal fraction is integrated in closed form,

    alpha_bar(t) = exp(-beta_min t - 0.5 (beta_max - beta_min) t^2),

so alpha_t = sqrt(alpha_bar) and sigma_t = sqrt(1 - alpha_bar) are exact at
any t, not just on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BETA_MIN = 0.1
DEFAULT_BETA_MAX = 20.0
DEFAULT_N_STEPS = 50


@dataclass(frozen=True)
class NoiseSchedule:
    beta_min: float
    beta_max: float
    n_steps: int
    t_grid: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    def integrated_beta(self, t: float) -> float:
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def alpha_sigma(self, t: float) -> tuple[float, float]:
        """Continuous ``(alpha_t, sigma_t)`` at any t in [0, 1]."""
        _check_time(t)
        abar = math.exp(-self.integrated_beta(t))
        return math.sqrt(abar), math.sqrt(-math.expm1(-self.integrated_beta(t)))

    def time_of(self, step: int) -> float:
        _check_step(self, step, lo=0)
        return step / self.n_steps


def make_schedule(
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    n_steps: int = DEFAULT_N_STEPS,
) -> NoiseSchedule:
    if not beta_min > 0:
        raise ValueError(f"beta_min must be positive, got {beta_min}")
    if not beta_max >= beta_min:
        raise ValueError(f"beta_max ({beta_max}) must be >= beta_min ({beta_min})")
    if int(n_steps) != n_steps or n_steps < 2:
        raise ValueError(f"n_steps must be an integer >= 2, got {n_steps}")
    n_steps = int(n_steps)
    t = np.arange(n_steps + 1, dtype=np.float64) / n_steps
    integral = beta_min * t + 0.5 * (beta_max - beta_min) * t * t
    alpha_bar = np.exp(-integral)
    alpha = np.sqrt(alpha_bar)
    # -expm1 keeps sigma accurate near t=0 and gives exactly 0 at t=0
    sigma = np.sqrt(-np.expm1(-integral))
    for arr in (t, alpha_bar, alpha, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(float(beta_min), float(beta_max), n_steps, t, alpha_bar, alpha, sigma)


def beta_at(s: NoiseSchedule, t: float) -> float:
    _check_time(t)
    return s.beta_min + t * (s.beta_max - s.beta_min)


def strength_to_step(s: NoiseSchedule, strength: float) -> int:
    """Inversion start index ``round(strength * N)`` clamped to [1, N]."""
    if not 0 < strength <= 1:
        raise ValueError(f"strength must lie in (0, 1], got {strength}")
    # round-half-up on the product; Python's round() would send 0.5*N odd cases to even
    idx = int(math.floor(strength * s.n_steps + 0.5))
    return min(max(idx, 1), s.n_steps)


def window_steps(s: NoiseSchedule, start_step: int, ratio: float) -> list[int]:
    """First ``ceil(ratio * N)`` reverse steps from ``start_step``, stopping at 1."""
    _check_step(s, start_step, lo=1)
    if not 0 < ratio <= 1:
        raise ValueError(f"window ratio must lie in (0, 1], got {ratio}")
    # tolerate float noise such as 0.1 * 50 = 5.000000000000001
    length = math.ceil(ratio * s.n_steps - 1e-9)
    return list(range(start_step, max(start_step - length, 0), -1))


def _check_time(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")


def _check_step(s: NoiseSchedule, step: int, lo: int) -> None:
    if int(step) != step or not lo <= step <= s.n_steps:
        raise ValueError(f"step must be an integer in [{lo}, {s.n_steps}], got {step}")
