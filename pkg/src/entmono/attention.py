"""Multi-head scaled dot-product attention with pluggable normalizers.

Each head turns score rows into weight rows with one of: softmax,
softmax-temperature, sparsemax, entmax-fixed, or entmax-adaptive (the last
two differ only in whether the alpha pre-parameter receives gradient
updates).  Masking restricts the normalizer's domain to the allowed keys of
each query row: disallowed keys are excluded from the transform and written
back as exact zeros, never hit with additive -inf (whose effect on
sparsemax/entmax thresholds is ill-defined).

`attention_head` / `multi_head` are the per-sequence surface.  `mha_forward`
/ `mha_backward` are the batched functional layer the trainer uses; the
backward returns gradients for every projection and alpha pre-parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entmono.transforms import (
    AlphaParameter,
    Temperature,
    entmax_rows,
    softmax_rows,
    sparsemax_rows,
)

NORMALIZER_KINDS = (
    "softmax",
    "softmax-temperature",
    "sparsemax",
    "entmax-fixed",
    "entmax-adaptive",
)


@dataclass(frozen=True)
class ProjectionWeights:
    """Per-head projections stacked on axis 0; wo mixes the concatenated heads.

    wq/wk/wv: (h, d_model, d_k) with d_k = d_model/h exactly; wo: (h*d_k, d_model).
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        if self.wq.ndim != 3:
            raise ValueError("wq must be (h, d_model, d_k)")
        h, d_model, d_k = self.wq.shape
        if self.wk.shape != (h, d_model, d_k) or self.wv.shape != (h, d_model, d_k):
            raise ValueError("wq/wk/wv must share the shape (h, d_model, d_k)")
        if d_model % h != 0 or d_k != d_model // h:
            raise ValueError(
                f"head width must be d_model/h exactly, got d_k={d_k}, d_model={d_model}, h={h}"
            )
        if self.wo.shape != (h * d_k, d_model):
            raise ValueError(f"wo must be (h*d_k, d_model), got {self.wo.shape}")
        for name in ("wq", "wk", "wv", "wo"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def h(self) -> int:
        return self.wq.shape[0]

    @property
    def d_model(self) -> int:
        return self.wq.shape[1]

    @property
    def d_k(self) -> int:
        return self.wq.shape[2]

    @classmethod
    def random(cls, d_model: int, h: int, seed: int) -> "ProjectionWeights":
        """Seeded uniform init in [-1/sqrt(d_model), 1/sqrt(d_model)]."""
        if d_model % h != 0:
            raise ValueError(f"d_model={d_model} not divisible by h={h}")
        rng = np.random.default_rng(seed)
        d_k = d_model // h
        bound = 1.0 / np.sqrt(d_model)
        u = lambda *shape: rng.uniform(-bound, bound, size=shape)
        return cls(
            wq=u(h, d_model, d_k),
            wk=u(h, d_model, d_k),
            wv=u(h, d_model, d_k),
            wo=u(h * d_k, d_model),
        )


@dataclass(frozen=True)
class HeadNormalizerConfig:
    """Which transform a head applies to its score rows.

    temp is required for softmax-temperature; alpha (an AlphaParameter) is
    required for the entmax kinds; neither may be supplied otherwise.
    """

    kind: str
    temp: Temperature | None = None
    alpha: AlphaParameter | None = None

    def __post_init__(self):
        if self.kind not in NORMALIZER_KINDS:
            raise ValueError(f"kind must be one of {NORMALIZER_KINDS}, got {self.kind!r}")
        needs_temp = self.kind == "softmax-temperature"
        needs_alpha = self.kind in ("entmax-fixed", "entmax-adaptive")
        if needs_temp != (self.temp is not None):
            raise ValueError(f"kind {self.kind!r}: temp must be given exactly when required")
        if needs_alpha != (self.alpha is not None):
            raise ValueError(f"kind {self.kind!r}: alpha must be given exactly when required")

    @property
    def effective_alpha(self) -> float:
        """Alpha of the underlying entmax family member (1 for softmax kinds)."""
        if self.kind in ("softmax", "softmax-temperature"):
            return 1.0
        if self.kind == "sparsemax":
            return 2.0
        return self.alpha.alpha


@dataclass(frozen=True)
class AttentionMask:
    """Boolean (queries x keys) matrix; True marks an attendable key."""

    allowed: np.ndarray

    def __post_init__(self):
        if self.allowed.ndim != 2 or self.allowed.dtype != bool:
            raise ValueError("allowed must be a 2-D boolean matrix")
        if not self.allowed.any(axis=1).all():
            raise ValueError("every query row needs at least one allowed key")

    @classmethod
    def full(cls, t: int, s: int) -> "AttentionMask":
        return cls(np.ones((t, s), dtype=bool))

    @classmethod
    def causal(cls, t: int) -> "AttentionMask":
        return cls(np.tril(np.ones((t, t), dtype=bool)))


@dataclass(frozen=True)
class HeadStats:
    mean_entropy: float
    zero_fraction: float
    histogram: np.ndarray  # 20 integer bins over [0, 1]


@dataclass(frozen=True)
class AttentionOutput:
    """context: (T, d_model); weights: per-head (T, S) simplex rows."""

    context: np.ndarray
    weights: tuple[np.ndarray, ...]
    mask: AttentionMask

    @property
    def stats(self) -> list[HeadStats]:
        return head_score_stats(self)


def sinusoidal_pe(length: int, d_model: int) -> np.ndarray:
    """Interleaved sin/cos positional encoding; entries in [-1, 1].

    PE[pos, 2i] = sin(pos / 10000^(2i/d_model)); PE[pos, 2i+1] = cos(same).
    """
    if length < 1 or d_model < 1:
        raise ValueError("length and d_model must be positive")
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(length)[:, None]
    i2 = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def project_qkv(x: np.ndarray, w: ProjectionWeights, head: int):
    """Q = X Wq_h, K = X Wk_h, V = X Wv_h for one head."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.d_model:
        raise ValueError(f"x must be (T, {w.d_model}), got {x.shape}")
    if not 0 <= head < w.h:
        raise ValueError(f"head index {head} out of range for h={w.h}")
    return x @ w.wq[head], x @ w.wk[head], x @ w.wv[head]


def normalize_rows(scores: np.ndarray, cfg: HeadNormalizerConfig) -> np.ndarray:
    """Apply the configured transform to each score row."""
    if cfg.kind == "softmax":
        return softmax_rows(scores)
    if cfg.kind == "softmax-temperature":
        return softmax_rows(scores, temp=cfg.temp.t)
    if cfg.kind == "sparsemax":
        return sparsemax_rows(scores)[0]
    return entmax_rows(scores, cfg.effective_alpha)


def normalizer_vjp_rows(
    probs: np.ndarray, grad_probs: np.ndarray, cfg: HeadNormalizerConfig
) -> np.ndarray:
    """Row-wise VJP of `normalize_rows` back to the score rows."""
    p = probs
    g = grad_probs
    if cfg.kind in ("softmax", "softmax-temperature"):
        out = p * (g - (p * g).sum(axis=-1, keepdims=True))
        if cfg.kind == "softmax-temperature":
            out = out / cfg.temp.t  # chain rule through scores/t
        return out
    on = p > 0
    if cfg.kind == "sparsemax":
        mean = (g * on).sum(axis=-1, keepdims=True) / on.sum(axis=-1, keepdims=True)
        return np.where(on, g - mean, 0.0)
    s = np.where(on, p, 1.0) ** (2.0 - cfg.effective_alpha) * on
    ratio = (s * g).sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True)
    return s * (g - ratio)


def alpha_grad_rows(
    probs: np.ndarray, scores: np.ndarray, alpha: float
) -> np.ndarray:
    """Row-wise d(probs)/d(alpha) for entmax rows (see grads.entmax_alpha_grad)."""
    p = probs
    on = p > 0
    s = np.where(on, p, 1.0) ** (2.0 - alpha) * on
    plogp = np.where(on, p * np.log(np.where(on, p, 1.0)), 0.0)
    tau_dot = ((s * scores).sum(axis=-1, keepdims=True) - plogp.sum(axis=-1, keepdims=True)) / s.sum(
        axis=-1, keepdims=True
    )
    return (s * (scores - tau_dot) - plogp) / (alpha - 1.0)


def attention_head(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    cfg: HeadNormalizerConfig,
    mask: AttentionMask | None = None,
):
    """One attention head: scores = QK^T/sqrt(d_k), normalize, mix V.

    Returns (head output T x d_v, weights T x S).  The normalizer sees only
    each row's allowed keys; masked cells come back as exact zeros.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("q, k, v must be 2-D")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"inner dims disagree: q{q.shape} k{k.shape} v{v.shape}")
    t, s = q.shape[0], k.shape[0]
    if mask is None:
        mask = AttentionMask.full(t, s)
    if mask.allowed.shape != (t, s):
        raise ValueError(f"mask must be ({t}, {s}), got {mask.allowed.shape}")
    scores = q @ k.T / np.sqrt(q.shape[1])
    weights = np.zeros((t, s))
    if mask.allowed.all():
        weights = normalize_rows(scores, cfg)
    else:
        for r in range(t):
            cols = mask.allowed[r]
            weights[r, cols] = normalize_rows(scores[r, cols][None, :], cfg)[0]
    return weights @ v, weights


def multi_head(
    x: np.ndarray,
    w: ProjectionWeights,
    cfgs: list[HeadNormalizerConfig],
    mask: AttentionMask | None = None,
) -> AttentionOutput:
    """Concatenate per-head outputs along features, then mix with wo."""
    x = np.asarray(x, dtype=np.float64)
    if len(cfgs) != w.h:
        raise ValueError(f"need one config per head: got {len(cfgs)} for h={w.h}")
    if mask is None:
        mask = AttentionMask.full(x.shape[0], x.shape[0])
    outs = []
    weights = []
    for i, cfg in enumerate(cfgs):
        q, k, v = project_qkv(x, w, i)
        out, wt = attention_head(q, k, v, cfg, mask)
        outs.append(out)
        weights.append(wt)
    context = np.concatenate(outs, axis=1) @ w.wo
    return AttentionOutput(context=context, weights=tuple(weights), mask=mask)


def head_score_stats(out: AttentionOutput) -> list[HeadStats]:
    """Per-head mean row entropy, exact-zero fraction, and a 20-bin histogram.

    All three are computed over allowed cells only; masked cells are not
    zeros 'earned' by the transform and would distort the sparsity reading.
    """
    allowed = out.mask.allowed
    n_allowed = int(allowed.sum())
    stats = []
    for wt in out.weights:
        vals = wt[allowed]
        pos = vals[vals > 0]
        # Shannon entropy per row, then averaged
        ent = 0.0
        for r in range(wt.shape[0]):
            row = wt[r, allowed[r]]
            rpos = row[row > 0]
            ent -= float(np.sum(rpos * np.log(rpos)))
        mean_entropy = ent / wt.shape[0]
        zero_fraction = float((vals == 0.0).sum()) / n_allowed
        hist, _ = np.histogram(vals, bins=20, range=(0.0, 1.0))
        stats.append(
            HeadStats(mean_entropy=mean_entropy, zero_fraction=zero_fraction, histogram=hist)
        )
    return stats


# ---------------------------------------------------------------------------
# batched functional layer (training path; full mask)


def mha_forward(x: np.ndarray, w: ProjectionWeights, cfgs: list[HeadNormalizerConfig]):
    """Batched multi-head self-attention forward: x is (B, T, d_model).

    Returns (context (B, T, d_model), cache for `mha_backward`).  Scores are
    kept in the cache because the adaptive-alpha backward needs them.
    """
    b, t, d = x.shape
    if len(cfgs) != w.h:
        raise ValueError(f"need one config per head: got {len(cfgs)} for h={w.h}")
    scale = 1.0 / np.sqrt(w.d_k)
    heads = []
    for i, cfg in enumerate(cfgs):
        q = x @ w.wq[i]
        k = x @ w.wk[i]
        v = x @ w.wv[i]
        scores = q @ np.swapaxes(k, 1, 2) * scale
        probs = normalize_rows(scores.reshape(b * t, t), cfg).reshape(b, t, t)
        heads.append((q, k, v, scores, probs))
    concat = np.concatenate([probs @ v for (_, _, v, _, probs) in heads], axis=2)
    context = concat @ w.wo
    cache = {"x": x, "w": w, "cfgs": cfgs, "heads": heads, "concat": concat}
    return context, cache


def mha_backward(cache: dict, grad_context: np.ndarray):
    """Backward of `mha_forward`.

    Returns (grad_x, grads) where grads holds 'wq','wk','wv','wo' stacked like
    ProjectionWeights and 'alpha_pre': per-head gradient of the alpha
    pre-parameter (0 for heads without one or with it frozen).
    """
    x = cache["x"]
    w: ProjectionWeights = cache["w"]
    cfgs = cache["cfgs"]
    heads = cache["heads"]
    concat = cache["concat"]
    b, t, d = x.shape
    d_k = w.d_k
    scale = 1.0 / np.sqrt(d_k)

    grad_wo = np.einsum("btm,btd->md", concat, grad_context)
    grad_concat = grad_context @ w.wo.T
    grad_x = np.zeros_like(x)
    grad_wq = np.zeros_like(w.wq)
    grad_wk = np.zeros_like(w.wk)
    grad_wv = np.zeros_like(w.wv)
    grad_alpha_pre = np.zeros(w.h)

    for i, cfg in enumerate(cfgs):
        q, k, v, scores, probs = heads[i]
        g_head = grad_concat[:, :, i * d_k : (i + 1) * d_k]
        g_probs = g_head @ np.swapaxes(v, 1, 2)
        g_v = np.swapaxes(probs, 1, 2) @ g_head
        g_scores = normalizer_vjp_rows(
            probs.reshape(b * t, t), g_probs.reshape(b * t, t), cfg
        ).reshape(b, t, t)
        if cfg.kind == "entmax-adaptive":
            dp_dalpha = alpha_grad_rows(probs, scores, cfg.effective_alpha)
            g_alpha = float((g_probs * dp_dalpha).sum())
            sig = cfg.effective_alpha - 1.0  # sigmoid(pre)
            grad_alpha_pre[i] = g_alpha * sig * (1.0 - sig)
        g_q = g_scores @ k * scale
        g_k = np.swapaxes(g_scores, 1, 2) @ q * scale
        grad_wq[i] = np.einsum("btd,btk->dk", x, g_q)
        grad_wk[i] = np.einsum("btd,btk->dk", x, g_k)
        grad_wv[i] = np.einsum("btd,btk->dk", x, g_v)
        grad_x += g_q @ w.wq[i].T + g_k @ w.wk[i].T + g_v @ w.wv[i].T

    grads = {
        "wq": grad_wq,
        "wk": grad_wk,
        "wv": grad_wv,
        "wo": grad_wo,
        "alpha_pre": grad_alpha_pre,
    }
    return grad_x, grads
