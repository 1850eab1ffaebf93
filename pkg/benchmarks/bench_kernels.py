"""Compiled kernels vs the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time for each backend
and checks the two outputs agree before timing.
"""

import argparse
import timeit

import numpy as np

from msgtransfer import kernels


def cases():
    rng = np.random.default_rng(0)
    d, k, iters = 16, 8, 5000
    means = rng.normal(size=(k, d))
    variances = rng.uniform(0.2, 2.0, size=(k, d))
    logw = np.log(np.full(k, 1.0 / k))
    noise = rng.normal(size=(iters, d))
    z0 = np.zeros(d)
    return {
        "splitmix64_block n=1e6": ("splitmix64_block", (12345, 0, 1_000_000)),
        "uniform_block n=1e6": ("uniform_block", (12345, 0, 1_000_000)),
        "gaussian_block n=1e6": ("gaussian_block", (12345, 0, 1_000_000)),
        f"ula_diag_mixture_chain d={d} K={k} iters={iters}": (
            "ula_diag_mixture_chain", (z0, means, variances, logw, 0.01, 0.1, noise)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled extension not built; only the fallback is timed")
    backends = {"python": kernels.fallback}
    if kernels.compiled is not None:
        backends["compiled"] = kernels.compiled
    for label, (name, argv) in cases().items():
        outs, times = {}, {}
        for b, mod in backends.items():
            fn = getattr(mod, name)
            outs[b] = fn(*argv)
            times[b] = min(timeit.repeat(lambda: fn(*argv), number=1, repeat=args.repeat))
        if len(outs) == 2:
            a, c = outs["python"], outs["compiled"]
            if isinstance(a, tuple):
                a, c = a[0], c[0]
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)
        line = "  ".join(f"{b} {t * 1e3:9.2f} ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speedup {times['python'] / times['compiled']:6.1f}x"
        print(f"{label:48s} {line}")


if __name__ == "__main__":
    main()
