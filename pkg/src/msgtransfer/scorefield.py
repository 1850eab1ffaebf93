"""Score fields: closed-form Gaussian mixtures and a small learned denoiser.

Both backends answer ``score(z, step, y)`` for latents with optional leading
batch axes. ``y=None`` is the unconditional (NULL) branch.

Under the VP forward process a Gaussian component N(mu, S) diffuses to
N(alpha_t mu, alpha_t^2 S + sigma_t^2 I), so mixture scores and log
densities stay closed-form at every t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from msgtransfer.schedule import NoiseSchedule
from msgtransfer.videocore import CATEGORIES, SeededRng, load_archive, save_archive

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# analytic backend


@dataclass(frozen=True)
class GaussianModel:
    """Mean plus full (d, d) or diagonal (d,) covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim == 0:
            cov = np.full(mean.shape, float(cov))
        d = mean.shape[0]
        if cov.ndim == 1:
            if cov.shape != (d,) or not np.all(cov > 0):
                raise ValueError("diagonal covariance must be positive with the mean's dimension")
        elif cov.shape == (d, d):
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise ValueError("covariance is not symmetric")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ValueError("covariance is not positive definite")
        else:
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.covariance.ndim == 1


@dataclass(frozen=True)
class MixtureModel:
    weights: tuple[float, ...]
    components: tuple[GaussianModel, ...]
    labels: tuple[int | None, ...] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValueError("need one weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be positive and sum to 1, got {w}")
        if len({c.dim for c in self.components}) != 1:
            raise ValueError("components disagree on dimension")
        if self.labels is not None and len(self.labels) != len(w):
            raise ValueError("need one label per component")

    @classmethod
    def single(cls, mean, covariance, label: int | None = None) -> "MixtureModel":
        return cls((1.0,), (GaussianModel(mean, covariance),), None if label is None else (label,))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def restrict(self, y: int | None) -> tuple[np.ndarray, tuple[GaussianModel, ...]]:
        """Renormalised log-weights and components matching ``y`` (all for NULL)."""
        w = np.asarray(self.weights, dtype=np.float64)
        if y is None or self.labels is None:
            return np.log(w), self.components
        keep = [i for i, lab in enumerate(self.labels) if lab == y]
        if not keep:
            raise ValueError(f"no mixture component carries label {y}")
        wk = w[keep] / w[keep].sum()
        return np.log(wk), tuple(self.components[i] for i in keep)


def _flatten(z: np.ndarray, d: int) -> tuple[np.ndarray, tuple[int, ...]]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        z = z.reshape(1)
    for i in range(z.ndim + 1):
        if math.prod(z.shape[i:]) == d:
            return z.reshape(-1, d), z.shape
    raise ValueError(f"latent shape {z.shape} does not match model dimension {d}")


def _component_terms(comp: GaussianModel, zf: np.ndarray, a: float, s2: float):
    """Log density and score of one diffused component for rows of ``zf``."""
    diff = zf - a * comp.mean
    d = comp.dim
    if comp.diagonal:
        var = a * a * comp.covariance + s2
        score = -diff / var
        logp = -0.5 * (d * LOG_2PI + np.log(var).sum() + (diff * diff / var).sum(axis=1))
        return logp, score
    cov = a * a * comp.covariance + s2 * np.eye(d)
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, diff.T)  # L^{-1} diff
    score = -np.linalg.solve(chol.T, sol).T
    logp = -0.5 * (d * LOG_2PI + 2.0 * np.log(np.diag(chol)).sum() + (sol * sol).sum(axis=0))
    return logp, score


def _mixture_terms(m: MixtureModel, z, t: float, s: NoiseSchedule, y):
    a, sig = s.alpha_sigma(t)
    zf, shape = _flatten(z, m.dim)
    logw, comps = m.restrict(y)
    terms = [_component_terms(c, zf, a, sig * sig) for c in comps]
    logps = np.stack([lw + lp for lw, (lp, _) in zip(logw, terms)])  # (K, B)
    top = logps.max(axis=0)
    resp = np.exp(logps - top)
    total = resp.sum(axis=0)
    log_density = top + np.log(total)
    resp /= total
    score = sum(r[:, None] * sc for r, (_, sc) in zip(resp, terms))
    return log_density, score, shape


def analytic_score(m: MixtureModel, z, t: float, s: NoiseSchedule, y=None) -> np.ndarray:
    """Exact ``grad_z log p_t(z | y)`` of the diffused mixture (float64)."""
    _, score, shape = _mixture_terms(m, z, t, s, y)
    return score.reshape(shape)


def analytic_log_density(m: MixtureModel, z, t: float, s: NoiseSchedule, y=None):
    logp, _, shape = _mixture_terms(m, z, t, s, y)
    batch = shape[: len(shape) - _event_ndim(shape, m.dim)]
    return float(logp[0]) if not batch else logp.reshape(batch)


def _event_ndim(shape, d):
    for i in range(len(shape) + 1):
        if math.prod(shape[i:]) == d:
            return len(shape) - i
    raise ValueError("shape mismatch")


class AnalyticField:
    """Score field backed by one mixture whose components carry labels."""

    def __init__(self, mixture: MixtureModel, schedule: NoiseSchedule):
        self.mixture = mixture
        self.schedule = schedule

    def score(self, z: np.ndarray, step: int, y=None) -> np.ndarray:
        return analytic_score(self.mixture, z, self.schedule.time_of(step), self.schedule, y)


# learned backend

TIME_EMBED = 16
COND_EMBED = 16


def time_embedding(t: np.ndarray, width: int = TIME_EMBED) -> np.ndarray:
    """Sinusoidal features of continuous time t in [0, 1]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    # highest frequency stays below the Nyquist rate of a 50-step grid
    freqs = np.exp(np.linspace(math.log(0.25), math.log(16.0), half))
    ang = t[:, None] * freqs[None, :] * math.pi
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _silu_grad(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return sig * (1.0 + x * (1.0 - sig))


@dataclass
class DenoiserNet:
    """MLP predicting the injected noise from (z_t, t, y).

    Input is ``[flatten(z_t), time features, condition embedding]``. The
    condition table has one row per category plus a final NULL row. A
    per-coordinate, time-gated linear skip ``(temb @ skip_w + skip_b) * z_t``
    is added to the MLP output; without it the hidden bottleneck cannot
    carry the near-identity part of the noise prediction. Parameters are
    stored float32; arithmetic runs in float64.
    """

    latent_shape: tuple[int, ...]
    hidden: tuple[int, ...]
    params: dict[str, np.ndarray] = field(repr=False)
    n_classes: int = len(CATEGORIES)

    @property
    def dim(self) -> int:
        return math.prod(self.latent_shape)

    @property
    def null_row(self) -> int:
        return self.n_classes

    @classmethod
    def create(cls, latent_shape, hidden=(256, 256), n_classes=len(CATEGORIES), rng: SeededRng | None = None,
               init: str = "random") -> "DenoiserNet":
        """``init="zero"`` zeros everything; ``"random"`` scales hidden layers
        by 1/sqrt(fan_in) and zeros the output layer so the first prediction is 0."""
        d = math.prod(latent_shape)
        widths = [d + TIME_EMBED + COND_EMBED, *hidden, d]
        params: dict[str, np.ndarray] = {}
        rng = rng or SeededRng(0)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if init == "zero" or last:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal((fan_in, fan_out)) / math.sqrt(fan_in)
            params[f"w{i}"] = w.astype(np.float32)
            params[f"b{i}"] = np.zeros(fan_out, dtype=np.float32)
        emb = np.zeros((n_classes + 1, COND_EMBED)) if init == "zero" else rng.normal((n_classes + 1, COND_EMBED))
        params["cond_embed"] = emb.astype(np.float32)
        params["skip_w"] = np.zeros((TIME_EMBED, d), dtype=np.float32)
        params["skip_b"] = np.zeros(d, dtype=np.float32)
        return cls(tuple(latent_shape), tuple(hidden), params, n_classes)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def label_rows(self, y, batch: int) -> np.ndarray:
        if y is None:
            return np.full(batch, self.null_row)
        rows = np.broadcast_to(np.asarray(y), (batch,)).astype(np.int64).copy()
        rows[rows < 0] = self.null_row
        if np.any(rows > self.null_row):
            raise ValueError(f"condition out of range for {self.n_classes} classes")
        return rows

    def forward(self, zf: np.ndarray, t, rows: np.ndarray, params=None, keep=False):
        p = self.params if params is None else params
        temb = time_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (zf.shape[0],)))
        h = np.concatenate([zf, temb, p["cond_embed"][rows].astype(np.float64)], axis=1)
        cache = [h]
        for i in range(self.n_layers):
            a = h @ p[f"w{i}"].astype(np.float64) + p[f"b{i}"]
            if i < self.n_layers - 1:
                cache.append(a)
                h = _silu(a)
                cache.append(h)
            else:
                h = a
        h = h + (temb @ p["skip_w"].astype(np.float64) + p["skip_b"]) * zf
        cache.append(temb)
        return (h, cache) if keep else h

    def predict_eps(self, z: np.ndarray, t, y=None) -> np.ndarray:
        zf, shape = _flatten(z, self.dim)
        return self.forward(zf, t, self.label_rows(y, zf.shape[0])).reshape(shape)

    def loss_and_grad(self, zf, t, rows, eps, params=None):
        """Mean over the batch of ``|eps_hat - eps|^2`` summed over coordinates."""
        p = self.params if params is None else params
        out, cache = self.forward(zf, t, rows, p, keep=True)
        b = zf.shape[0]
        resid = out - eps
        loss = float((resid * resid).sum() / b)
        grads = {}
        g = 2.0 * resid / b
        gz = g * zf
        grads["skip_w"] = cache[-1].T @ gz
        grads["skip_b"] = gz.sum(axis=0)
        for i in reversed(range(self.n_layers)):
            h_in = cache[2 * i]
            grads[f"w{i}"] = h_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ p[f"w{i}"].astype(np.float64).T
            if i > 0:
                g = g * _silu_grad(cache[2 * i - 1])
        ge = np.zeros(p["cond_embed"].shape)
        np.add.at(ge, rows, g[:, self.dim + TIME_EMBED:])
        grads["cond_embed"] = ge
        return loss, grads

    def save(self, path) -> None:
        save_archive(path, self.params, dict(kind="denoiser", latent_shape=list(self.latent_shape),
                                             hidden=list(self.hidden), n_classes=self.n_classes))

    @classmethod
    def load(cls, path) -> "DenoiserNet":
        tensors, meta = load_archive(path)
        if meta.get("kind") != "denoiser":
            raise ValueError(f"{path} is not a denoiser archive")
        return cls(tuple(meta["latent_shape"]), tuple(meta["hidden"]), tensors, meta["n_classes"])


def denoiser_score(net: DenoiserNet, z: np.ndarray, step: int, s: NoiseSchedule, y=None) -> np.ndarray:
    """Score ``-eps_hat / sigma_t``; step 0 has sigma=0 and is rejected."""
    if step < 1 or step > s.n_steps:
        raise ValueError(f"denoiser score needs 1 <= step <= {s.n_steps}, got {step}")
    return -net.predict_eps(z, s.time_of(step), y) / s.sigma[step]


class LearnedField:
    def __init__(self, net: DenoiserNet, schedule: NoiseSchedule):
        self.net = net
        self.schedule = schedule

    def score(self, z: np.ndarray, step: int, y=None) -> np.ndarray:
        return denoiser_score(self.net, z, step, self.schedule, y)


# training


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    learning_rate: float = 0.05
    clip_norm: float = 10.0
    p_drop: float = 0.1
    hidden: tuple[int, ...] = (256, 256)
    seed: int = 0
    log_every: int = 100


class TrainingDivergedError(FloatingPointError):
    pass


def train_denoiser(clips: np.ndarray, labels, schedule: NoiseSchedule, config: TrainConfig | None = None,
                   rng: SeededRng | None = None, net: DenoiserNet | None = None) -> tuple[DenoiserNet, list[float]]:
    """Denoising score matching with classifier-free label dropout.

    Plain SGD with global-norm gradient clipping. Each step draws clip
    indices, uniform steps in [1, N], the noise, and the dropout coins from
    ``rng`` in that fixed order.
    """
    cfg = config or TrainConfig()
    if len(clips) == 0:
        raise ValueError("training set is empty")
    if not 0 <= cfg.p_drop < 1:
        raise ValueError(f"p_drop must lie in [0, 1), got {cfg.p_drop}")
    rng = rng or SeededRng(cfg.seed)
    x0 = np.asarray(clips, dtype=np.float64).reshape(len(clips), -1)
    labels = np.asarray(labels, dtype=np.int64)
    if net is None:
        net = DenoiserNet.create(clips.shape[1:], cfg.hidden, rng=rng.spawn("init"))
    params = {k: v.astype(np.float64) for k, v in net.params.items()}
    curve = []
    for it in range(cfg.steps):
        idx = rng.integers(len(x0), (cfg.batch_size,))
        steps = 1 + rng.integers(schedule.n_steps, (cfg.batch_size,))
        eps = rng.normal((cfg.batch_size, x0.shape[1]))
        drop = rng.uniform((cfg.batch_size,)) < cfg.p_drop
        zt = schedule.alpha[steps][:, None] * x0[idx] + schedule.sigma[steps][:, None] * eps
        rows = np.where(drop, net.null_row, labels[idx])
        loss, grads = net.loss_and_grad(zt, steps / schedule.n_steps, rows, eps, params)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {it}")
        gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        factor = cfg.learning_rate * min(1.0, cfg.clip_norm / max(gnorm, 1e-12))
        for k, g in grads.items():
            params[k] -= factor * g
        curve.append(loss)
        if cfg.log_every and it % cfg.log_every == 0:
            logger.info("step %d loss %.2f |g| %.1f", it, loss, gnorm)
    net.params = {k: v.astype(np.float32) for k, v in params.items()}
    return net, curve
