"""Analytic backward passes for the simplex transforms.

Vector-Jacobian products with respect to the logits for softmax, sparsemax,
and general entmax, the d(probs)/d(alpha) path used by adaptive heads, and
the central finite-difference oracle that validates all of them.

At support boundaries the sparsemax/entmax Jacobian is set-valued; these
implementations take the subgradient treating boundary entries as out of
support (strict p > 0), which matches the closed forms below.  FD checks
must therefore stay away from boundary points; `support_margin` measures
the distance to the nearest support change for that filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entmono.transforms import (
    DEFAULT_BISECT_ITERS,
    SparseDistribution,
    Temperature,
    as_logit_vector,
    entmax_bisect_rows,
    entmax15_rows,
    softmax_rows,
    sparsemax_rows,
)


@dataclass(frozen=True)
class BackwardContext:
    """State saved from a transform forward call.

    z is retained only when the alpha derivative is needed; the VJPs with
    respect to the logits need just probs (and alpha).
    """

    probs: SparseDistribution
    alpha: float
    z: np.ndarray | None = None

    @classmethod
    def from_distribution(
        cls, dist: SparseDistribution, z=None
    ) -> "BackwardContext":
        retained = None if z is None else as_logit_vector(z)
        return cls(probs=dist, alpha=dist.alpha, z=retained)


def _ctx_probs(ctx: BackwardContext) -> np.ndarray:
    return ctx.probs.probs


def _check_v(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != n:
        raise ValueError(f"cotangent must be a length-{n} vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("cotangent must be finite")
    return v


def softmax_vjp(ctx: BackwardContext, v) -> np.ndarray:
    """v -> p * (v - (p.v)); the Jacobian is diag(p) - p p^T.

    This is the unit-temperature Jacobian; a forward pass through
    softmax(z/t) scales it by 1/t, which is the caller's chain-rule step.
    """
    p = _ctx_probs(ctx)
    v = _check_v(v, p.size)
    return p * (v - float(p @ v))


def sparsemax_vjp(ctx: BackwardContext, v) -> np.ndarray:
    """On the support: v minus the support mean of v; zero off support."""
    p = _ctx_probs(ctx)
    v = _check_v(v, p.size)
    on = p > 0
    g = np.zeros_like(p)
    g[on] = v[on] - v[on].mean()
    return g


def entmax_vjp(ctx: BackwardContext, v) -> np.ndarray:
    """General-alpha entmax VJP (alpha > 1).

    With s_j = p_j^(2-alpha) on the support and 0 elsewhere:
    g = s*v - s*(s.v)/sum(s).  Reduces to sparsemax_vjp at alpha = 2.
    """
    if not ctx.alpha > 1:
        raise ValueError(f"entmax_vjp requires alpha > 1, got {ctx.alpha} (use softmax_vjp)")
    p = _ctx_probs(ctx)
    v = _check_v(v, p.size)
    on = p > 0
    s = np.zeros_like(p)
    s[on] = p[on] ** (2.0 - ctx.alpha)
    sv = float(s @ v)
    return s * v - s * (sv / float(s.sum()))


def entmax_alpha_grad(ctx: BackwardContext) -> np.ndarray:
    """d(probs)/d(alpha) for entmax, zero off support.

    On the support, with s_j = p_j^(2-alpha):
        tau' = (sum s_j z_j - sum p_j ln p_j) / sum s_j
        dp_j = (s_j (z_j - tau') - p_j ln p_j) / (alpha - 1)
    tau' is the derivative of the threshold, fixed by sum(dp) = 0.  The
    expression is invariant to shifting z by a constant.
    """
    if ctx.z is None:
        raise RuntimeError("entmax_alpha_grad requires the retained logits z in the context")
    if not (1.0 < ctx.alpha <= 2.0):
        raise ValueError(f"entmax_alpha_grad requires alpha in (1, 2], got {ctx.alpha}")
    p = _ctx_probs(ctx)
    z = as_logit_vector(ctx.z)
    if z.size != p.size:
        raise ValueError("retained z length does not match probs")
    on = p > 0
    ps = p[on]
    zs = z[on]
    s = ps ** (2.0 - ctx.alpha)
    plogp = ps * np.log(ps)
    tau_dot = (float(s @ zs) - float(plogp.sum())) / float(s.sum())
    g = np.zeros_like(p)
    g[on] = (s * (zs - tau_dot) - plogp) / (ctx.alpha - 1.0)
    return g


# ---------------------------------------------------------------------------
# finite-difference oracle

_TAGS = ("softmax", "sparsemax", "entmax15", "entmax")


def transform_fn(kind: str, *, alpha: float | None = None,
                 temp: Temperature | float | None = None,
                 iters: int = DEFAULT_BISECT_ITERS):
    """probs-only callable for a transform tag; the FD oracle's target."""
    if kind not in _TAGS:
        raise ValueError(f"unknown transform tag {kind!r}, expected one of {_TAGS}")
    if kind == "softmax":
        t = temp.t if isinstance(temp, Temperature) else (1.0 if temp is None else float(temp))
        return lambda z: softmax_rows(z[None, :], temp=t)[0]
    if kind == "sparsemax":
        return lambda z: sparsemax_rows(z[None, :])[0][0]
    if kind == "entmax15":
        return lambda z: entmax15_rows(z[None, :])[0][0]
    if alpha is None:
        raise ValueError("entmax tag requires alpha")
    if alpha == 1.5:
        return lambda z: entmax15_rows(z[None, :])[0][0]
    return lambda z: entmax_bisect_rows(z[None, :], alpha, iters)[0][0]


def finite_difference_jacobian(f, z, eps: float = 1e-5, **params) -> np.ndarray:
    """Central-difference Jacobian of a transform at z.

    f is either a callable mapping a logit vector to a probability vector,
    or a transform tag (see `transform_fn`) with its parameters passed as
    keyword arguments.  Column j is (f(z + eps e_j) - f(z - eps e_j))/(2 eps).
    """
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError(f"eps must be positive, got {eps}")
    if isinstance(f, str):
        f = transform_fn(f, **params)
    z = as_logit_vector(z)
    n = z.size
    jac = np.empty((n, n))
    for j in range(n):
        bump = np.zeros(n)
        bump[j] = eps
        jac[:, j] = (f(z + bump) - f(z - bump)) / (2.0 * eps)
    return jac


def finite_difference_alpha(
    z, alpha: float, eps: float = 1e-4, iters: int = 100
) -> np.ndarray:
    """Central FD of entmax probs in alpha, re-solving by bisection at alpha +- eps."""
    z = as_logit_vector(z)
    hi = entmax_bisect_rows(z[None, :], alpha + eps, iters)[0][0]
    lo = entmax_bisect_rows(z[None, :], alpha - eps, iters)[0][0]
    return (hi - lo) / (2.0 * eps)


def support_margin(dist: SparseDistribution, z) -> float:
    """Distance to the nearest support change, for FD point filtering.

    Combines the smallest in-support probability (how close an entry is to
    leaving) with, on the transform's internal scale, the gap between the
    threshold and the largest excluded logit (how close an entry is to
    entering).  Softmax has no kinks; its margin is just min(p).
    """
    z = as_logit_vector(z)
    p = dist.probs
    if z.size != p.size:
        raise ValueError("z length does not match distribution")
    if dist.tau is None:
        return float(p.min())
    on = p > 0
    margin = float(p[on].min())
    if not on.all():
        x = (dist.alpha - 1.0) * z  # internal scale: z, z/2, (alpha-1)z
        gap = float((dist.tau - x[~on]).min())
        margin = min(margin, gap)
    return margin
