"""Timing comparison of the numba and numpy kernel backends.

Runs every kernel at a few representative shapes under both backends and
prints one CSV row per (kernel, shape, backend) plus the numba speedup.
Usage: python3 benchmarks/compare_backends.py [--iters N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from entmono import backend, kernels


def _time(fn, iters: int) -> float:
    fn()  # warm the dispatch (and jit compilation on the numba path)
    best = float("inf")
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases():
    rng = np.random.default_rng(7)
    for batch, dim in ((256, 64), (1024, 512)):
        zs = rng.uniform(-4, 4, size=(batch, dim))
        xs = (zs - zs.max(axis=1, keepdims=True)) / 2.0
        zb = 0.5 * (zs - zs.max(axis=1, keepdims=True))
        shape = f"{batch}x{dim}"
        yield f"softmax_rows[{shape}]", lambda z=zs: kernels.softmax_rows(z)
        yield f"sparsemax_rows[{shape}]", lambda z=zs: kernels.sparsemax_rows(z)
        yield f"entmax15_rows[{shape}]", lambda x=xs: kernels.entmax15_rows(x)
        yield (f"entmax_bisect_rows[{shape}]",
               lambda z=zb: kernels.entmax_bisect_rows(z, 2.0, 50))
    for b, u, s in ((32, 10, 20), (64, 32, 64)):
        p = rng.uniform(0.05, 0.95, size=(b, u, s))
        ga = rng.normal(size=(b, u, s))
        shape = f"{b}x{u}x{s}"
        yield f"alignment_forward[{shape}]", lambda pp=p: kernels.alignment_forward(pp)

        def _bwd(pp=p, g=ga):
            _, q = kernels.alignment_forward(pp)
            kernels.alignment_backward(pp, q, g)

        yield f"alignment_backward[{shape}]", _bwd


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--iters", type=int, default=10)
    args = ap.parse_args()

    if not backend.numba_available():
        print("numba backend unavailable; nothing to compare")
        return 1

    print("kernel,numpy_ms,numba_ms,speedup")
    for name, fn in _cases():
        backend.use_backend("numpy")
        t_np = _time(fn, args.iters)
        backend.use_backend("numba")
        t_nb = _time(fn, args.iters)
        print(f"{name},{1e3 * t_np:.3f},{1e3 * t_nb:.3f},{t_np / t_nb:.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
