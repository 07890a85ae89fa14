"""Independent brute-force oracles the library is validated against.

Deliberately use different algorithms than the package: sparsemax by
exhaustive support enumeration (KKT feasibility over every subset),
expected alignment by summing over every Bernoulli trigger outcome, and
dense attention by direct evaluation.  Slow and simple on purpose.
"""

from __future__ import annotations

import numpy as np


def sparsemax_exhaustive(z: np.ndarray):
    """Try every nonempty support; keep the KKT-feasible one.

    Feasible means: p > 0 strictly on the support and z - tau <= 0 off it.
    Returns (probs, tau, support frozenset).
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    for mask in range(1, 2**n):
        idx = np.array([j for j in range(n) if (mask >> j) & 1])
        tau = (z[idx].sum() - 1.0) / idx.size
        diff = z - tau
        on = np.zeros(n, dtype=bool)
        on[idx] = True
        if np.all(diff[on] > 0) and np.all(diff[~on] <= 0):
            p = np.where(on, diff, 0.0)
            return p, tau, frozenset(int(j) for j in idx)
    raise AssertionError("no feasible support found (oracle bug)")


def sparsemax_exhaustive_batch(z: np.ndarray, chunk: int = 1000):
    """Vectorized exhaustive-support sparsemax for a (B, n) batch, n <= 12.

    Returns (probs, tau).  Picks the unique feasible support per row.
    """
    z = np.asarray(z, dtype=np.float64)
    b, n = z.shape
    masks = np.array(
        [[(m >> j) & 1 for j in range(n)] for m in range(1, 2**n)], dtype=bool
    )  # (M, n)
    sizes = masks.sum(axis=1).astype(np.float64)  # (M,)
    probs = np.empty_like(z)
    taus = np.empty(b)
    for lo in range(0, b, chunk):
        zc = z[lo : lo + chunk]
        tau = (zc @ masks.T - 1.0) / sizes  # (c, M)
        diff = zc[:, None, :] - tau[:, :, None]  # (c, M, n)
        ok_on = np.all(np.where(masks[None], diff > 0, True), axis=2)
        ok_off = np.all(np.where(masks[None], True, diff <= 0), axis=2)
        feas = ok_on & ok_off  # (c, M)
        assert np.all(feas.any(axis=1)), "oracle: some row has no feasible support"
        pick = feas.argmax(axis=1)
        rows = np.arange(zc.shape[0])
        t = tau[rows, pick]
        p = np.where(masks[pick], zc - t[:, None], 0.0)
        probs[lo : lo + chunk] = p
        taus[lo : lo + chunk] = t
    return probs, taus


def hard_decode_reference(trigger: np.ndarray, start: int = 0) -> np.ndarray:
    """Scan rule on a fixed 0/1 trigger matrix; sentinel = S when exhausted."""
    u, s = trigger.shape
    t = np.empty(u, dtype=np.int64)
    prev = start
    for i in range(u):
        ti = s  # sentinel
        for j in range(prev, s):
            if trigger[i, j]:
                ti = j
                break
        t[i] = ti
        prev = ti
    return t


def expected_alignment_enum(p: np.ndarray) -> np.ndarray:
    """Expected alignment by summing over all 2^(U*S) Bernoulli outcomes.

    Outcome weight is prod p^z (1-p)^(1-z); each outcome's hard path adds
    its weight at (i, t_i) for every non-sentinel step.  Vectorized over
    outcomes; feasible up to U*S = 18.
    """
    p = np.asarray(p, dtype=np.float64)
    u, s = p.shape
    cells = u * s
    outcomes = np.arange(2**cells, dtype=np.int64)
    bits = ((outcomes[:, None] >> np.arange(cells)) & 1).astype(bool)
    bits = bits.reshape(-1, u, s)  # (N, U, S)
    w = np.where(bits, p, 1.0 - p).reshape(-1, cells).prod(axis=1)  # (N,)
    a = np.zeros((u, s))
    n = bits.shape[0]
    t_prev = np.zeros(n, dtype=np.int64)
    cols = np.arange(s)
    for i in range(u):
        valid = bits[:, i, :] & (cols[None, :] >= t_prev[:, None])
        hit = valid.any(axis=1)
        t_i = np.where(hit, valid.argmax(axis=1), s)
        np.add.at(a[i], t_i[hit], w[hit])
        t_prev = t_i
    return a


def dense_attention_reference(x, wq, wk, wv, wo):
    """Direct multi-head softmax attention: per head softmax(QK^T/sqrt(dk))V."""
    h, _, dk = wq.shape
    outs = []
    for i in range(h):
        q = x @ wq[i]
        k = x @ wk[i]
        v = x @ wv[i]
        scores = q @ k.T / np.sqrt(dk)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        outs.append(w @ v)
    return np.concatenate(outs, axis=1) @ wo
