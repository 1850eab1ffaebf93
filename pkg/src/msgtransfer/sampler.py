"""Reverse VP-SDE integration, forward noising and Langevin chains.

Reverse Euler-Maruyama step from grid step k (t = k/N, dt = 1/N)::

    z <- z + (beta_t/2 z + beta_t score) dt + sqrt(beta_t dt) xi

The deterministic (probability-flow) variant halves the score coefficient
and draws no noise. With ``final_denoise`` the last transition 1 -> 0 is
replaced by the posterior-mean estimate ``(z + sigma_1^2 score) / alpha_1``
and draws no noise; otherwise the residual step-1 noise (and the last
injected increment) stays in the output.

RNG stream contract: a stochastic reverse step draws exactly one normal
block of ``z.shape`` regardless of the guidance mode, so changing guidance
never shifts the random stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from msgtransfer import kernels
from msgtransfer.guidance import GuidanceSpec, guided_score
from msgtransfer.schedule import NoiseSchedule, beta_at
from msgtransfer.scorefield import MixtureModel
from msgtransfer.videocore import SeededRng


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, where: str = "chain"):
        super().__init__(f"{where} produced a non-finite state at step {step}")
        self.step = step


@dataclass
class SamplerConfig:
    start_step: int
    noise_mode: Literal["stochastic", "deterministic"] = "stochastic"
    final_denoise: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.noise_mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")


@dataclass
class LangevinConfig:
    step_size: float
    n_iters: int
    inverse_temperature: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("Langevin step size must be positive")
        if self.n_iters < 1:
            raise ValueError("Langevin needs at least one iteration")
        if not self.inverse_temperature > 0:
            raise ValueError("inverse temperature must be positive")


def forward_noise(z0: np.ndarray, step: int, s: NoiseSchedule, rng: SeededRng | None = None,
                  eps: np.ndarray | None = None) -> np.ndarray:
    """``alpha_k z0 + sigma_k eps``; pass ``eps`` to bypass the rng (test hook)."""
    if int(step) != step or not 0 <= step <= s.n_steps:
        raise ValueError(f"step must lie in [0, {s.n_steps}], got {step}")
    z0 = np.asarray(z0, dtype=np.float64)
    if eps is None:
        eps = rng.normal(z0.shape)
    return s.alpha[step] * z0 + s.sigma[step] * eps


def reverse_step(z: np.ndarray, step: int, score: np.ndarray, s: NoiseSchedule, cfg: SamplerConfig,
                 rng: SeededRng | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    if step < 1 or step > s.n_steps:
        raise ValueError(f"reverse step needs 1 <= step <= {s.n_steps}, got {step}")
    if np.shape(score) != np.shape(z):
        raise ValueError(f"score shape {np.shape(score)} does not match latent {np.shape(z)}")
    beta = beta_at(s, s.time_of(step))
    dt = s.dt
    if cfg.noise_mode == "deterministic":
        return z + (0.5 * beta * z + 0.5 * beta * score) * dt
    if noise is None:
        noise = rng.normal(np.shape(z))
    return z + (0.5 * beta * z + beta * score) * dt + np.sqrt(beta * dt) * noise


def tweedie_denoise(z: np.ndarray, step: int, score: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Posterior mean of the clean latent given ``z`` at ``step``."""
    return (z + s.sigma[step] ** 2 * score) / s.alpha[step]


def sample(field, guidance: GuidanceSpec, cfg: SamplerConfig, s: NoiseSchedule, y, rng: SeededRng,
           init: np.ndarray | None = None, reference: dict | None = None, shape=None,
           trace: list | None = None) -> np.ndarray:
    """Integrate from ``cfg.start_step`` down to step 0.

    ``init`` is required for inversion starts (start_step < N); otherwise a
    standard normal start of ``shape`` is drawn. ``trace``, when given,
    collects ``(step, guided)`` per step.
    """
    if not 1 <= cfg.start_step <= s.n_steps:
        raise ValueError(f"start_step must lie in [1, {s.n_steps}], got {cfg.start_step}")
    if init is None:
        if cfg.start_step < s.n_steps:
            raise ValueError("an inversion start (start_step < N) needs an initial latent")
        if shape is None:
            raise ValueError("need either init or shape")
        z = rng.normal(tuple(shape))
    else:
        z = np.array(init, dtype=np.float64)
    for step in range(cfg.start_step, 0, -1):
        score = guided_score(field, z, step, y, guidance, reference)
        if trace is not None:
            trace.append((step, guidance.active(step)))
        if step == 1 and cfg.final_denoise:
            z = tweedie_denoise(z, step, score, s)
        else:
            z = reverse_step(z, step, score, s, cfg, rng)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(step, "reverse sampler")
    return z.astype(np.float32)


def langevin_sample(drift: Callable[[np.ndarray], np.ndarray], cfg: LangevinConfig, init, rng: SeededRng,
                    noise: bool = True) -> np.ndarray:
    """Unadjusted Langevin: ``z + (eps/2) drift(z) + sqrt(eps / beta_temp) xi``.

    ``drift`` is a score (or :func:`~msgtransfer.guidance.mixed_potential_drift`
    bound to its arguments). Returns the chain including the initial state.
    With ``noise=False`` no random numbers are drawn.
    """
    z = np.array(init, dtype=np.float64)
    chain = np.empty((cfg.n_iters + 1, *z.shape))
    chain[0] = z
    half = 0.5 * cfg.step_size
    scale = np.sqrt(cfg.step_size / cfg.inverse_temperature)
    d = z.size
    pad = 2 * ((d + 1) // 2)
    for k in range(cfg.n_iters):
        z = z + half * drift(z)
        if noise:
            z = z + scale * rng.normal(pad)[:d].reshape(z.shape)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(k + 1, "Langevin")
        chain[k + 1] = z
    return chain


def langevin_mixture_chain(m: MixtureModel, cfg: LangevinConfig, init, rng: SeededRng, y=None) -> np.ndarray:
    """ULA on a diagonal-covariance mixture via the compiled kernel.

    Consumes the rng exactly like :func:`langevin_sample` with the mixture
    score as drift, so both routes follow the same noise path.
    """
    logw, comps = m.restrict(y)
    if not all(c.diagonal for c in comps):
        raise ValueError("the mixture chain kernel supports diagonal covariances only")
    z0 = np.atleast_1d(np.asarray(init, dtype=np.float64)).ravel()
    d = z0.size
    if d != m.dim:
        raise ValueError(f"initial state has {d} coordinates, mixture has {m.dim}")
    pad = 2 * ((d + 1) // 2)
    noise = np.ascontiguousarray(rng.normal((cfg.n_iters, pad))[:, :d])
    means = np.ascontiguousarray(np.stack([c.mean for c in comps]))
    variances = np.ascontiguousarray(np.stack([c.covariance for c in comps]))
    chain, bad = kernels.ula_diag_mixture_chain(
        z0, means, variances, np.ascontiguousarray(logw), float(cfg.step_size),
        float(np.sqrt(cfg.step_size / cfg.inverse_temperature)), noise,
    )
    if bad >= 0:
        raise DivergenceError(int(bad), "Langevin")
    return chain
