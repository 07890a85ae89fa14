"""Dispatch to the active kernel backend (see `entmono.backend`)."""

from __future__ import annotations

import numpy as np

from entmono import backend as _backend
from entmono.kernels import numpy_impl as _numpy_impl


def _impl():
    if _backend.active_backend() == "numba":
        from entmono.kernels import numba_impl as _numba_impl

        return _numba_impl
    return _numpy_impl


def softmax_rows(zs: np.ndarray) -> np.ndarray:
    return _impl().softmax_rows(zs)


def sparsemax_rows(zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _impl().sparsemax_rows(zs)


def entmax15_rows(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _impl().entmax15_rows(xs)


def entmax_bisect_rows(
    zs: np.ndarray, expo: float, iters: int
) -> tuple[np.ndarray, np.ndarray]:
    return _impl().entmax_bisect_rows(zs, expo, iters)


def alignment_forward(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _impl().alignment_forward(p)


def alignment_backward(
    p: np.ndarray, q: np.ndarray, grad_a: np.ndarray
) -> np.ndarray:
    return _impl().alignment_backward(p, q, grad_a)


def warmup() -> None:
    """Force one call through every kernel so jit compile cost is paid early."""
    z = np.array([[0.1, -0.2, 0.3], [0.0, 0.0, 0.0]])
    softmax_rows(z)
    sparsemax_rows(z)
    entmax15_rows(z)
    entmax_bisect_rows(z, 2.0, 10)
    p = np.full((1, 2, 3), 0.5)
    a, q = alignment_forward(p)
    alignment_backward(p, q, np.ones_like(p))
