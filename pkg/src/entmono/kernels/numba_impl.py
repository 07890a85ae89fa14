"""Numba-jitted kernels, one-to-one with `numpy_impl`.

Same contracts as the numpy versions; rows are processed in explicit loops.
cache=True persists compiled code on disk so only the first process pays
the compile cost.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def softmax_rows(zs):
    m, n = zs.shape
    out = np.empty((m, n))
    for r in range(m):
        tot = 0.0
        for j in range(n):
            v = np.exp(zs[r, j])
            out[r, j] = v
            tot += v
        inv = 1.0 / tot
        for j in range(n):
            out[r, j] *= inv
    return out


@njit(cache=True)
def sparsemax_rows(zs):
    m, n = zs.shape
    probs = np.empty((m, n))
    tau = np.empty(m)
    for r in range(m):
        srt = np.sort(zs[r])  # ascending; walk from the top
        csum = 0.0
        kstar = 1
        csum_star = 0.0
        for k in range(1, n + 1):
            v = srt[n - k]
            csum += v
            if 1.0 + k * v > csum:
                kstar = k
                csum_star = csum
        t = (csum_star - 1.0) / kstar
        tau[r] = t
        for j in range(n):
            d = zs[r, j] - t
            probs[r, j] = d if d > 0.0 else 0.0
    return probs, tau


@njit(cache=True)
def entmax15_rows(xs):
    # The threshold depends only on the in-support prefix of the sorted row,
    # so each row is resolved against a partial top-k sort, doubling k for
    # the rare rows whose support turns out wider.
    m, n = xs.shape
    probs = np.empty((m, n))
    tau = np.empty(m)
    for r in range(m):
        cap = 32 if 32 < n else n
        tau_r = 0.0
        while True:
            if cap >= n:
                srt = np.sort(xs[r])
                width = n
            else:
                part = np.partition(xs[r], n - cap)
                srt = np.sort(part[n - cap :])
                width = cap
            csum = 0.0
            csum_sq = 0.0
            kstar = 0
            for k in range(1, width + 1):
                v = srt[width - k]
                csum += v
                csum_sq += v * v
                mean = csum / k
                ss = csum_sq - csum * mean  # k * (second moment - mean^2)
                delta = (1.0 - ss) / k
                if delta < 0.0:
                    delta = 0.0
                t = mean - np.sqrt(delta)
                if t <= v:
                    tau_r = t
                    kstar = k
            if kstar < width or cap >= n:
                break
            cap = 2 * cap if 2 * cap < n else n
        tau[r] = tau_r
        for j in range(n):
            d = xs[r, j] - tau_r
            probs[r, j] = d * d if d > 0.0 else 0.0
    return probs, tau


@njit(cache=True)
def entmax_bisect_rows(zs, expo, iters):
    m, n = zs.shape
    probs = np.empty((m, n))
    tau = np.empty(m)
    for r in range(m):
        lo = zs[r, 0]
        hi = zs[r, 0]
        for j in range(1, n):
            v = zs[r, j]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        lo -= 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            mass = 0.0
            for j in range(n):
                d = zs[r, j] - mid
                if d > 0.0:
                    mass += d**expo
            if mass >= 1.0:
                lo = mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
        tau[r] = t
        tot = 0.0
        for j in range(n):
            d = zs[r, j] - t
            p = d**expo if d > 0.0 else 0.0
            probs[r, j] = p
            tot += p
        inv = 1.0 / tot
        for j in range(n):
            probs[r, j] *= inv
    return probs, tau


@njit(cache=True)
def alignment_forward(p):
    b, u, s = p.shape
    a = np.empty_like(p)
    q = np.empty_like(p)
    for bb in range(b):
        a_prev = np.zeros(s)
        a_prev[0] = 1.0
        for i in range(u):
            q[bb, i, 0] = a_prev[0]
            for j in range(1, s):
                q[bb, i, j] = q[bb, i, j - 1] * (1.0 - p[bb, i, j - 1]) + a_prev[j]
            for j in range(s):
                a[bb, i, j] = p[bb, i, j] * q[bb, i, j]
                a_prev[j] = a[bb, i, j]
    return a, q


@njit(cache=True)
def alignment_backward(p, q, grad_a):
    b, u, s = p.shape
    grad_p = np.empty_like(p)
    for bb in range(b):
        carry = np.zeros(s)
        ga = np.empty(s)
        gq = np.empty(s)
        for i in range(u - 1, -1, -1):
            for j in range(s):
                ga[j] = grad_a[bb, i, j] + carry[j]
                grad_p[bb, i, j] = ga[j] * q[bb, i, j]
                gq[j] = ga[j] * p[bb, i, j]
            for j in range(s - 1, 0, -1):
                gq[j - 1] += gq[j] * (1.0 - p[bb, i, j - 1])
                grad_p[bb, i, j - 1] -= gq[j] * q[bb, i, j - 1]
            for j in range(s):
                carry[j] = gq[j]
    return grad_p
