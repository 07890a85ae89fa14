"""Simplex-normalizing transforms.

Softmax (with temperature), sparsemax, exact 1.5-entmax, bisection entmax
for general alpha > 1, a dispatching `entmax`, and the Tsallis entropy the
family maximizes.  Single-vector operations return a `SparseDistribution`;
the `*_rows` variants work on 2-D batches and return plain arrays for hot
paths (attention, benchmarks).

All transforms subtract the row max before thresholding; outputs are
invariant to that shift, and reported thresholds are translated back to the
input scale.  Note the threshold lives on the transform's internal scale:
z for sparsemax, z/2 for 1.5-entmax (probs = max(z/2 - tau, 0)^2), and
(alpha-1)*z for bisection entmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entmono import kernels

# Type alias: a logit vector is any 1-D array-like of finite reals, n >= 1.
LogitVector = np.ndarray

DEFAULT_BISECT_ITERS = 50


def sigmoid(x):
    """Numerically stable logistic function, scalar or array."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    a = np.atleast_1d(arr)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ex = np.exp(a[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out.reshape(arr.shape)


def as_logit_vector(values) -> np.ndarray:
    """Validate and convert to a 1-D float64 logit vector."""
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {z.shape}")
    if z.size < 1:
        raise ValueError("logits must contain at least one entry")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite (no NaN/inf)")
    return z


def _as_logit_rows(values) -> np.ndarray:
    z = np.ascontiguousarray(values, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D batch of logit rows, got shape {z.shape}")
    if z.shape[1] < 1:
        raise ValueError("logit rows must have at least one entry")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite (no NaN/inf)")
    return z


@dataclass(frozen=True)
class Temperature:
    """Softmax temperature; divides the logits."""

    t: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.t) and self.t > 0):
            raise ValueError(f"temperature must be a positive finite real, got {self.t}")


@dataclass(frozen=True)
class AlphaParameter:
    """Learnable sparsity parameter stored via an unconstrained pre-parameter.

    alpha = 1 + sigmoid(pre) lies strictly in (1, 2); pre = 0 gives exactly
    alpha = 1.5, and alpha is monotone increasing in pre.
    """

    pre: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.pre):
            raise ValueError(f"pre-parameter must be finite, got {self.pre}")

    @property
    def alpha(self) -> float:
        return 1.0 + sigmoid(self.pre)

    @classmethod
    def from_alpha(cls, alpha: float) -> "AlphaParameter":
        """Pre-parameter whose derived alpha equals the given value."""
        if not (np.isfinite(alpha) and 1.0 < alpha < 2.0):
            raise ValueError(f"representable alpha lies strictly in (1, 2), got {alpha}")
        return cls(pre=float(np.log((alpha - 1.0) / (2.0 - alpha))))


@dataclass(frozen=True)
class SparseDistribution:
    """A simplex point with explicit support, threshold, and producing alpha.

    tau is None for softmax (no thresholding happens); otherwise it is the
    Lagrange threshold on the producing transform's internal scale.
    """

    probs: np.ndarray
    support: tuple[int, ...]
    tau: float | None
    alpha: float

    def __post_init__(self):
        p = self.probs
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty 1-D array")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("probs must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probs must sum to 1 within 1e-6, got {p.sum()!r}")
        if len(self.support) == 0:
            raise ValueError("support must be non-empty")
        on = np.zeros(p.size, dtype=bool)
        on[list(self.support)] = True
        if np.any(p[on] <= 0) or np.any(p[~on] != 0):
            raise ValueError("support must be exactly the strictly positive indices")
        p.setflags(write=False)

    @property
    def n(self) -> int:
        return self.probs.size


def _support_of(p: np.ndarray) -> tuple[int, ...]:
    return tuple(int(j) for j in np.flatnonzero(p > 0))


# ---------------------------------------------------------------------------
# batched row transforms


def softmax_rows(z, temp: float = 1.0) -> np.ndarray:
    """Row-wise softmax with temperature; max-shifted for overflow safety."""
    z = _as_logit_rows(z)
    if not (np.isfinite(temp) and temp > 0):
        raise ValueError(f"temperature must be positive, got {temp}")
    shifted = (z - z.max(axis=1, keepdims=True)) / temp
    return kernels.softmax_rows(shifted)


def sparsemax_rows(z) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise sparsemax; returns (probs, tau) with tau on the input scale."""
    z = _as_logit_rows(z)
    m = z.max(axis=1)
    probs, tau = kernels.sparsemax_rows(z - m[:, None])
    return probs, tau + m


def entmax15_rows(z) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise exact 1.5-entmax; tau is on the z/2 scale."""
    z = _as_logit_rows(z)
    m = z.max(axis=1)
    probs, tau = kernels.entmax15_rows((z - m[:, None]) / 2.0)
    return probs, tau + m / 2.0


def entmax_bisect_rows(
    z, alpha: float, iters: int = DEFAULT_BISECT_ITERS
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise bisection entmax; tau is on the (alpha-1)*z scale."""
    z = _as_logit_rows(z)
    if not (np.isfinite(alpha) and alpha > 1):
        raise ValueError(f"bisection entmax requires alpha > 1, got {alpha}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    m = z.max(axis=1)
    scaled = (alpha - 1.0) * (z - m[:, None])
    probs, tau = kernels.entmax_bisect_rows(scaled, 1.0 / (alpha - 1.0), int(iters))
    return probs, tau + (alpha - 1.0) * m


def entmax_rows(z, alpha: float, iters: int = DEFAULT_BISECT_ITERS) -> np.ndarray:
    """Row-wise entmax dispatcher; see `entmax` for the routing rules."""
    if not (np.isfinite(alpha) and alpha >= 1):
        raise ValueError(f"entmax requires alpha >= 1, got {alpha}")
    if alpha == 1.0:
        return softmax_rows(z)
    if alpha == 1.5:
        return entmax15_rows(z)[0]
    if alpha == 2.0:
        return sparsemax_rows(z)[0]
    return entmax_bisect_rows(z, alpha, iters)[0]


# ---------------------------------------------------------------------------
# single-vector operations


def softmax(z, temp: Temperature | float | None = None) -> SparseDistribution:
    """Softmax with temperature: probs = exp(z/t - m) / sum(exp(z/t - m)).

    Support is always full; tau is None (nothing is thresholded); alpha is
    recorded as 1.
    """
    z = as_logit_vector(z)
    if temp is None:
        t = 1.0
    elif isinstance(temp, Temperature):
        t = temp.t
    else:
        t = float(temp)
    probs = softmax_rows(z[None, :], temp=t)[0]
    # exp is strictly positive, but underflow to exact 0 is possible at
    # extreme logit gaps; keep the support honest either way.
    return SparseDistribution(probs=probs, support=_support_of(probs), tau=None, alpha=1.0)


def sparsemax(z) -> SparseDistribution:
    """Euclidean projection onto the simplex (closed-form sort algorithm).

    Sort z descending; k* = max{k : 1 + k*z_(k) > sum_{j<=k} z_(j)};
    tau = (sum_{j<=k*} z_(j) - 1)/k*; probs = max(z - tau, 0).
    """
    z = as_logit_vector(z)
    probs, tau = sparsemax_rows(z[None, :])
    return SparseDistribution(
        probs=probs[0], support=_support_of(probs[0]), tau=float(tau[0]), alpha=2.0
    )


def entmax15_exact(z) -> SparseDistribution:
    """Exact alpha=1.5 entmax via the sort-based threshold on halved logits.

    probs = max(z/2 - tau, 0)^2 with tau chosen so the squares sum to 1.
    """
    z = as_logit_vector(z)
    probs, tau = entmax15_rows(z[None, :])
    return SparseDistribution(
        probs=probs[0], support=_support_of(probs[0]), tau=float(tau[0]), alpha=1.5
    )


def entmax_bisect(
    z, alpha: float, iters: int = DEFAULT_BISECT_ITERS
) -> SparseDistribution:
    """General-alpha entmax by bisection on the threshold.

    Solves sum_j max((alpha-1)*z_j - tau, 0)^(1/(alpha-1)) = 1 for tau over
    the bracket [min((alpha-1)z) - 1, max((alpha-1)z)], then renormalizes
    the resulting probs by their sum to absorb residual bisection error.
    Requires alpha > 1; use `softmax` for the alpha = 1 case.
    """
    z = as_logit_vector(z)
    probs, tau = entmax_bisect_rows(z[None, :], alpha, iters)
    return SparseDistribution(
        probs=probs[0], support=_support_of(probs[0]), tau=float(tau[0]), alpha=float(alpha)
    )


def entmax(z, alpha: float) -> SparseDistribution:
    """Entmax dispatcher: alpha=1 softmax, 1.5 exact, 2 sparsemax, else bisection."""
    if not (np.isfinite(alpha) and alpha >= 1):
        raise ValueError(f"entmax requires alpha >= 1, got {alpha}")
    if alpha == 1.0:
        return softmax(z)
    if alpha == 1.5:
        return entmax15_exact(z)
    if alpha == 2.0:
        return sparsemax(z)
    return entmax_bisect(z, alpha)


def tsallis_entropy(p, alpha: float) -> float:
    """Tsallis alpha-entropy of a simplex point.

    alpha = 1: Shannon entropy -sum p log p (0 log 0 := 0); alpha > 1:
    (1/(alpha*(alpha-1))) * sum_j (p_j - p_j^alpha).  Nonnegative, maximized
    by the uniform distribution.
    """
    if isinstance(p, SparseDistribution):
        p = p.probs
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("p must be a non-empty 1-D probability vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("p must be nonnegative and finite")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError("p must lie on the simplex (sum to 1 within 1e-6)")
    if not (np.isfinite(alpha) and alpha >= 1):
        raise ValueError(f"tsallis entropy requires alpha >= 1, got {alpha}")
    if alpha == 1.0:
        pos = p[p > 0]
        val = -float(np.sum(pos * np.log(pos)))
    else:
        val = float(np.sum(p - p**alpha)) / (alpha * (alpha - 1.0))
    # each term is nonneg mathematically; clamp float dust
    return max(val, 0.0)
