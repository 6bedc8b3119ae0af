"""Compare the compiled kernels with the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--paths N] [--steps N] [--repeat N]
"""

import argparse
import time

import numpy as np

from smp_lab import kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(n_paths, n_steps, seed=0):
    rng = np.random.default_rng(seed)
    dt = 1.0 / n_steps
    coefs = dict(ax=0.1, ay=0.2, au=0.6, av=0.3, sx=0.2, sy=0.1, su=0.1, sv=0.1)
    tau_shared = (np.arange(n_steps + 1) // 2)[:, None]
    slopes = rng.uniform(0.3, 0.9, n_paths)
    tau_random = np.floor(np.arange(n_steps + 1)[:, None] * slopes + 1e-9).astype(np.int64)
    u = rng.normal(size=(n_steps, 1))
    dW = rng.normal(0, np.sqrt(dt), (n_steps, n_paths))
    M = 2 ** 18
    t = np.linspace(0, 1, M + 1)
    ric = dict(A=0.1 + 0 * t, C=np.ones(M + 1), D=0.2 + 0 * t, H=0.1 + 0 * t, Q=np.ones(M + 1),
               R=np.ones(M + 1))
    return {
        "linear_delay_euler (shared delay)":
            lambda b: kernels.linear_delay_euler(1.0, coefs, tau_shared, u, dW, dt, backend=b),
        "linear_delay_euler (random delay)":
            lambda b: kernels.linear_delay_euler(1.0, coefs, tau_random, u, dW, dt, backend=b),
        "pseudo_inverse_index":
            lambda b: kernels.pseudo_inverse_index(tau_random, backend=b),
        f"riccati_backward ({M} substeps)":
            lambda b: kernels.riccati_backward(1.0, ric, 1.0 / M, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"paths={args.paths} steps={args.steps} default backend={kernels.BACKEND}")
    print(f"{'kernel':40s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for name, fn in cases(args.paths, args.steps).items():
        results = [fn(b) for b in backends]
        if len(results) == 2 and not np.allclose(results[0], results[1], rtol=1e-12, atol=0):
            raise SystemExit(f"{name}: backends disagree")
        times = [_best(lambda: fn(b), args.repeat) for b in backends]
        speed = f"{times[0] / times[1]:8.1f}x" if len(times) == 2 else "      n/a"
        print(f"{name:40s} " + " ".join(f"{s:9.4f}s" for s in times) + f"  {speed}")


if __name__ == "__main__":
    main()
