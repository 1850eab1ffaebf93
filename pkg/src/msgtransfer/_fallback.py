"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def splitmix64_block(seed: int, counter: int, n: int) -> np.ndarray:
    k = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(counter & _MASK)
    z = np.uint64(seed & _MASK) + k * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform_block(seed: int, counter: int, n: int) -> np.ndarray:
    return (splitmix64_block(seed, counter, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def gaussian_block(seed: int, counter: int, n: int) -> np.ndarray:
    pairs = (n + 1) // 2
    u = uniform_block(seed, counter, 2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    out = np.empty((pairs, 2))
    out[:, 0] = r * np.cos(theta)
    out[:, 1] = r * np.sin(theta)
    return out.reshape(-1)[:n]


def ula_diag_mixture_chain(z0, means, variances, log_weights, step_size, noise_scale, noise):
    n_iters = noise.shape[0]
    logc = log_weights - 0.5 * np.log(2.0 * np.pi * variances).sum(axis=1)
    chain = np.empty((n_iters + 1, z0.shape[0]))
    chain[0] = z0
    for it in range(n_iters):
        z = chain[it]
        diff = z - means
        logr = logc - 0.5 * (diff * diff / variances).sum(axis=1)
        r = np.exp(logr - logr.max())
        drift = -(r[:, None] * diff / variances).sum(axis=0) / r.sum()
        chain[it + 1] = z + 0.5 * step_size * drift + noise_scale * noise[it]
        if not np.all(np.isfinite(chain[it + 1])):
            return chain[: it + 2], it + 1
    return chain, -1
