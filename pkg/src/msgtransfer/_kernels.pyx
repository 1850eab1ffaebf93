# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: counter-based RNG and the mixture Langevin chain.

Must stay numerically interchangeable with ``_fallback.py``; the u64 stream
is bit-identical and the floating kernels agree to libm rounding.
"""

import numpy as np

from libc.math cimport cos, exp, isfinite, log, sin, sqrt
from libc.stdint cimport uint64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64_block(uint64_t seed, uint64_t counter, Py_ssize_t n):
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _mix(seed + (counter + 1 + <uint64_t>i) * GOLDEN)
    return out


def uniform_block(uint64_t seed, uint64_t counter, Py_ssize_t n):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = <double>(_mix(seed + (counter + 1 + <uint64_t>i) * GOLDEN) >> 11) * INV_2_53
    return out


def gaussian_block(uint64_t seed, uint64_t counter, Py_ssize_t n):
    """Box-Muller normals; consumes ``2 * ceil(n / 2)`` counters."""
    cdef Py_ssize_t pairs = (n + 1) // 2
    out = np.empty(2 * pairs, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef uint64_t c
    cdef double u1, u2, r, theta
    with nogil:
        for i in range(pairs):
            c = counter + 1 + 2 * <uint64_t>i
            u1 = 1.0 - <double>(_mix(seed + c * GOLDEN) >> 11) * INV_2_53
            u2 = <double>(_mix(seed + (c + 1) * GOLDEN) >> 11) * INV_2_53
            r = sqrt(-2.0 * log(u1))
            theta = TWO_PI * u2
            o[2 * i] = r * cos(theta)
            o[2 * i + 1] = r * sin(theta)
    return out[:n]


def ula_diag_mixture_chain(
    double[::1] z0,
    double[:, ::1] means,
    double[:, ::1] variances,
    double[::1] log_weights,
    double step_size,
    double noise_scale,
    double[:, ::1] noise,
):
    """Unadjusted Langevin chain on a diagonal-covariance Gaussian mixture.

    Returns ``(chain, bad_step)``; ``bad_step`` is -1 unless a state went
    non-finite, in which case the chain is truncated after that step.
    """
    cdef Py_ssize_t n_iters = noise.shape[0]
    cdef Py_ssize_t d = z0.shape[0]
    cdef Py_ssize_t k = means.shape[0]
    chain_arr = np.empty((n_iters + 1, d), dtype=np.float64)
    cdef double[:, ::1] chain = chain_arr
    logc_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] logc = logc_arr
    logr_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] logr = logr_arr
    cdef Py_ssize_t it, i, j
    cdef double acc, diff, mx, total, drift, half = 0.5 * step_size
    cdef Py_ssize_t bad = -1

    with nogil:
        for i in range(k):
            acc = 0.0
            for j in range(d):
                acc += log(TWO_PI * variances[i, j])
            logc[i] = log_weights[i] - 0.5 * acc
        for j in range(d):
            chain[0, j] = z0[j]
        for it in range(n_iters):
            mx = -1e300
            for i in range(k):
                acc = 0.0
                for j in range(d):
                    diff = chain[it, j] - means[i, j]
                    acc += diff * diff / variances[i, j]
                logr[i] = logc[i] - 0.5 * acc
                if logr[i] > mx:
                    mx = logr[i]
            total = 0.0
            for i in range(k):
                logr[i] = exp(logr[i] - mx)
                total += logr[i]
            for j in range(d):
                drift = 0.0
                for i in range(k):
                    drift -= logr[i] * (chain[it, j] - means[i, j]) / variances[i, j]
                drift /= total
                chain[it + 1, j] = chain[it, j] + half * drift + noise_scale * noise[it, j]
                if not isfinite(chain[it + 1, j]):
                    bad = it + 1
            if bad >= 0:
                break
    if bad >= 0:
        return chain_arr[: bad + 1], bad
    return chain_arr, -1
