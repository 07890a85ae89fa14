"""Vectorized numpy kernels.

Every kernel works on 2-D (rows, n) or 3-D (batch, rows, n) float64 arrays
and treats rows independently.  Inputs arrive pre-conditioned by the callers
in `entmono.transforms` / `entmono.monotonic`: logits are already max-shifted
(and scaled where the transform calls for it), so thresholds returned here
live on the shifted scale.
"""

from __future__ import annotations

import numpy as np


def softmax_rows(zs: np.ndarray) -> np.ndarray:
    # zs is shifted so the row max is 0; exp cannot overflow.
    e = np.exp(zs)
    return e / e.sum(axis=1, keepdims=True)


def sparsemax_rows(zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of each row onto the simplex.

    Returns (probs, tau) with probs = max(zs - tau, 0).
    """
    srt = -np.sort(-zs, axis=1)
    csum = np.cumsum(srt, axis=1)
    k = np.arange(1, zs.shape[1] + 1, dtype=np.float64)
    # support condition holds for a prefix of the sorted row
    keep = 1.0 + k * srt > csum
    kstar = keep.sum(axis=1)
    rows = np.arange(zs.shape[0])
    tau = (csum[rows, kstar - 1] - 1.0) / kstar
    probs = np.maximum(zs - tau[:, None], 0.0)
    return probs, tau


def _entmax15_prefix(srt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row support size and threshold from a sorted-descending prefix."""
    rho = np.arange(1, srt.shape[1] + 1, dtype=np.float64)
    mean = np.cumsum(srt, axis=1) / rho
    mean_sq = np.cumsum(srt * srt, axis=1) / rho
    ss = rho * (mean_sq - mean * mean)
    delta = np.maximum((1.0 - ss) / rho, 0.0)  # clip float-negative residuals
    tau = mean - np.sqrt(delta)
    support = (tau <= srt).sum(axis=1)
    rows = np.arange(srt.shape[0])
    return support, tau[rows, support - 1]


def entmax15_rows(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact alpha=1.5 entmax on rows of xs = (z - max(z)) / 2.

    Returns (probs, tau) with probs = max(xs - tau, 0)^2.  The threshold
    depends only on the in-support prefix of the sorted row, so rows are
    resolved against a partial top-K sort, doubling K for the rare rows
    whose support turns out wider.
    """
    m, n = xs.shape
    probs = np.empty_like(xs)
    tau_out = np.empty(m)
    todo = np.arange(m)
    cur = xs
    k = min(n, 32)
    while todo.size:
        if k >= n:
            srt = -np.sort(-cur, axis=1)
        else:
            top = np.partition(cur, n - k, axis=1)[:, n - k :]
            srt = -np.sort(-top, axis=1)
        support, tau_star = _entmax15_prefix(srt)
        done = (support < k) | (k >= n)
        rows = todo[done]
        diff = np.maximum(cur[done] - tau_star[done, None], 0.0)
        probs[rows] = diff * diff
        tau_out[rows] = tau_star[done]
        todo = todo[~done]
        cur = cur[~done]
        k = min(n, 2 * k)
    return probs, tau_out


def entmax_bisect_rows(
    zs: np.ndarray, expo: float, iters: int
) -> tuple[np.ndarray, np.ndarray]:
    """Bisection entmax on rows of zs = (alpha - 1) * (z - max(z)).

    expo = 1 / (alpha - 1).  Brackets the threshold in
    [min(zs) - 1, max(zs)]; the mass function is decreasing in tau, so the
    root stays inside.  Probs are renormalized by their sum at the end.
    """
    lo = zs.min(axis=1) - 1.0
    hi = zs.max(axis=1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(zs - mid[:, None], 0.0) ** expo).sum(axis=1)
        ge = mass >= 1.0
        lo = np.where(ge, mid, lo)
        hi = np.where(ge, hi, mid)
    tau = 0.5 * (lo + hi)
    probs = np.maximum(zs - tau[:, None], 0.0) ** expo
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, tau


def alignment_forward(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expected monotonic alignment for selection probs p of shape (B, U, S).

    Row recursion: q[i,0] = a[i-1,0]; q[i,j] = q[i,j-1]*(1-p[i,j-1]) + a[i-1,j];
    a[i,j] = p[i,j]*q[i,j], seeded with a[-1] = one-hot at index 0.
    Returns (a, q); q is retained for the backward pass.
    """
    b, u, s = p.shape
    a = np.empty_like(p)
    q = np.empty_like(p)
    a_prev = np.zeros((b, s))
    a_prev[:, 0] = 1.0
    for i in range(u):
        pi = p[:, i, :]
        qi = q[:, i, :]
        qi[:, 0] = a_prev[:, 0]
        for j in range(1, s):
            qi[:, j] = qi[:, j - 1] * (1.0 - pi[:, j - 1]) + a_prev[:, j]
        a[:, i, :] = pi * qi
        a_prev = a[:, i, :]
    return a, q


def alignment_backward(
    p: np.ndarray, q: np.ndarray, grad_a: np.ndarray
) -> np.ndarray:
    """Backward of `alignment_forward`: grad wrt p given grad wrt a."""
    b, u, s = p.shape
    grad_p = np.empty_like(p)
    carry = np.zeros((b, s))  # grad wrt a[i-1] flowing up from row i
    for i in range(u - 1, -1, -1):
        ga = grad_a[:, i, :] + carry
        pi = p[:, i, :]
        qi = q[:, i, :]
        grad_p[:, i, :] = ga * qi
        gq = ga * pi
        for j in range(s - 1, 0, -1):
            gq[:, j - 1] += gq[:, j] * (1.0 - pi[:, j - 1])
            grad_p[:, i, j - 1] -= gq[:, j] * qi[:, j - 1]
        carry = gq
    return grad_p
