"""Monotonic attention: energy, selection, hard decoding, expected alignment.

A decoder step i scans encoder frames left to right starting where the
previous step stopped; frame j triggers with probability sigmoid(e[i,j]).
Inference uses the deterministic threshold rule (or seeded Bernoulli
sampling); training uses the differentiable expected alignment, which
marginalizes over every trigger outcome.  Mass that never triggers within a
row is kept as explicit leftover, not renormalized; a head that stops
triggering shows up in diagnostics instead of being silently rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from entmono import kernels
from entmono.transforms import sigmoid

END_SENTINEL_DOC = "the end-sentinel equals the number of encoder frames S"

# sigmoid(x) rounds to exactly 1.0 in float64 near x ~ 37; clip keeps
# selection probabilities strictly inside (0, 1) as the type requires
_PROB_EPS = 1e-12


@dataclass(frozen=True)
class MonotonicEnergyParams:
    """Weights of e = g * (v/|v|) . tanh(Ws^T s + Wh^T h + b) + r.

    ws: (decoder width, d); wh: (encoder width, d); b, v: (d,); g, r scalars.
    """

    ws: np.ndarray
    wh: np.ndarray
    b: np.ndarray
    v: np.ndarray
    g: float
    r: float

    def __post_init__(self):
        if self.ws.ndim != 2 or self.wh.ndim != 2:
            raise ValueError("ws and wh must be 2-D")
        d = self.ws.shape[1]
        if self.wh.shape[1] != d or self.b.shape != (d,) or self.v.shape != (d,):
            raise ValueError("ws/wh/b/v disagree on the energy width d")
        for name in ("ws", "wh", "b", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if not (np.isfinite(self.g) and np.isfinite(self.r)):
            raise ValueError("g and r must be finite")
        if not np.any(self.v != 0):
            raise ValueError("v must not be all-zero (it is normalized before use)")

    @property
    def d(self) -> int:
        return self.ws.shape[1]

    @classmethod
    def random(
        cls, dec_width: int, enc_width: int, d: int, seed: int, r_init: float = -1.0
    ) -> "MonotonicEnergyParams":
        """Seeded fan-in uniform init; r starts at -1 to bias toward low
        selection probability early (alignment forms before triggering)."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(max(dec_width, enc_width))
        return cls(
            ws=rng.uniform(-bound, bound, size=(dec_width, d)),
            wh=rng.uniform(-bound, bound, size=(enc_width, d)),
            b=rng.uniform(-bound, bound, size=d),
            v=rng.uniform(-bound, bound, size=d),
            g=1.0,
            r=r_init,
        )


@dataclass(frozen=True)
class SelectionProbabilities:
    """(U output steps x S encoder frames) trigger probabilities, strict (0,1)."""

    p: np.ndarray

    def __post_init__(self):
        if self.p.ndim != 2 or self.p.size == 0:
            raise ValueError("p must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(self.p)) or np.any(self.p <= 0) or np.any(self.p >= 1):
            raise ValueError("selection probabilities must lie strictly in (0, 1)")


@dataclass(frozen=True)
class AlignmentPath:
    """Non-decreasing attended indices; t[i] == n_keys marks the end-sentinel.

    contexts rows are the attended encoder frames (final frame for sentinel
    steps); present only when the decode call was given the frames.
    """

    t: np.ndarray
    n_keys: int
    contexts: np.ndarray | None = None

    def __post_init__(self):
        if self.t.ndim != 1:
            raise ValueError("t must be 1-D")
        if np.any(self.t < 0) or np.any(self.t > self.n_keys):
            raise ValueError("indices must lie in [0, n_keys] (n_keys = sentinel)")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("alignment path must be non-decreasing")

    @property
    def is_sentinel(self) -> np.ndarray:
        return self.t == self.n_keys


@dataclass(frozen=True)
class ExpectedAlignment:
    """a[i,j] = P(step i attends frame j); leftover[i] = escaped mass."""

    a: np.ndarray
    leftover: np.ndarray

    def __post_init__(self):
        if self.a.ndim != 2 or self.leftover.shape != (self.a.shape[0],):
            raise ValueError("a must be (U, S) with one leftover entry per row")
        total = self.a.sum(axis=1) + self.leftover
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise ValueError("each row's mass plus leftover must equal 1 within 1e-9")


def _as_prob_matrix(p) -> np.ndarray:
    if isinstance(p, SelectionProbabilities):
        return p.p
    arr = np.asarray(p, dtype=np.float64)
    SelectionProbabilities(arr)  # reuse the validation
    return arr


def monotonic_energy(s_prev, h_j, params: MonotonicEnergyParams) -> float:
    """Scalar energy between one decoder state and one encoder frame."""
    s_prev = np.asarray(s_prev, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if s_prev.shape != (params.ws.shape[0],):
        raise ValueError(f"decoder state must be ({params.ws.shape[0]},), got {s_prev.shape}")
    if h_j.shape != (params.wh.shape[0],):
        raise ValueError(f"encoder frame must be ({params.wh.shape[0]},), got {h_j.shape}")
    v_hat = params.v / np.linalg.norm(params.v)
    pre = params.ws.T @ s_prev + params.wh.T @ h_j + params.b
    return float(params.g * (v_hat @ np.tanh(pre)) + params.r)


def selection_prob(e):
    """sigmoid(e), clipped to stay strictly inside (0, 1)."""
    e = np.asarray(e, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("energies must be finite")
    out = np.clip(sigmoid(e), _PROB_EPS, 1.0 - _PROB_EPS)
    return float(out) if out.ndim == 0 else out


def hard_monotonic_decode(
    p,
    mode: str = "threshold",
    seed=None,
    start: int = 0,
    h_enc: np.ndarray | None = None,
) -> AlignmentPath:
    """Left-to-right scan decoding.

    Step i scans j = t[i-1], t[i-1]+1, ... and stops at the first triggered
    frame (threshold: p >= 0.5; sample: z ~ Bernoulli(p) from a seeded
    generator drawn once for the whole matrix).  An exhausted scan yields the
    end-sentinel S; with frames given, sentinel steps attend the final frame.
    """
    pm = _as_prob_matrix(p)
    u, s = pm.shape
    if not 0 <= start <= s:
        raise ValueError(f"start must lie in [0, {s}], got {start}")
    if mode == "threshold":
        trigger = pm >= 0.5
    elif mode == "sample":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        trigger = rng.random(pm.shape) < pm
    else:
        raise ValueError(f"mode must be 'threshold' or 'sample', got {mode!r}")
    t = np.empty(u, dtype=np.int64)
    prev = start
    for i in range(u):
        ti = s
        for j in range(prev, s):
            if trigger[i, j]:
                ti = j
                break
        t[i] = ti
        prev = ti
    contexts = None
    if h_enc is not None:
        h_enc = np.asarray(h_enc, dtype=np.float64)
        if h_enc.ndim != 2 or h_enc.shape[0] != s:
            raise ValueError(f"h_enc must be ({s}, width), got {h_enc.shape}")
        contexts = h_enc[np.minimum(t, s - 1)]
    return AlignmentPath(t=t, n_keys=s, contexts=contexts)


def expected_alignment(p) -> ExpectedAlignment:
    """Differentiable marginal attention under the scan rule.

    a[i,j] = p[i,j] * sum_{k<=j} a[i-1,k] * prod_{l=k}^{j-1} (1 - p[i,l]),
    seeded with a one-hot at frame 0.  Row mass that never triggers is the
    leftover; it is reported, never renormalized.
    """
    pm = _as_prob_matrix(p)
    a, _ = kernels.alignment_forward(pm[None])
    a = a[0]
    leftover = np.maximum(1.0 - a.sum(axis=1), 0.0)
    return ExpectedAlignment(a=a, leftover=leftover)


def expected_alignment_vjp(p, grad_a) -> np.ndarray:
    """Gradient of a loss through `expected_alignment` back to p."""
    pm = _as_prob_matrix(p)
    grad_a = np.asarray(grad_a, dtype=np.float64)
    if grad_a.shape != pm.shape:
        raise ValueError(f"grad_a must match p's shape {pm.shape}, got {grad_a.shape}")
    _, q = kernels.alignment_forward(pm[None])
    return kernels.alignment_backward(pm[None], q, grad_a[None])[0]


def head_l1_penalty(ps, lam: float, layer_filter=None) -> float:
    """L1 mass of selection probabilities over the filtered layers.

    ps is nested layers -> heads -> probability matrix.  layer_filter is a
    set of layer indices (None = every layer); the toy trainer passes the
    shallow half.  Returns lam * sum |p| over the selected layers and heads.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be nonnegative and finite, got {lam}")
    if layer_filter is not None:
        layer_filter = set(int(i) for i in layer_filter)
    total = 0.0
    for li, layer in enumerate(ps):
        if layer_filter is not None and li not in layer_filter:
            continue
        for head_p in layer:
            pm = head_p.p if isinstance(head_p, SelectionProbabilities) else np.asarray(head_p)
            total += float(np.abs(pm).sum())
    return lam * total


# ---------------------------------------------------------------------------
# batched energy (training path)


def energy_forward(s_dec: np.ndarray, h_enc: np.ndarray, params: MonotonicEnergyParams):
    """Batched energies: s_dec (B, U, ds), h_enc (B, S, dh) -> e (B, U, S).

    Returns (e, cache) with the tanh activations retained for the backward.
    """
    if s_dec.shape[2] != params.ws.shape[0] or h_enc.shape[2] != params.wh.shape[0]:
        raise ValueError("state widths disagree with the energy parameters")
    v_norm = float(np.linalg.norm(params.v))
    v_hat = params.v / v_norm
    pre = s_dec @ params.ws  # (B, U, d)
    hre = h_enc @ params.wh  # (B, S, d)
    t = np.tanh(pre[:, :, None, :] + hre[:, None, :, :] + params.b)  # (B, U, S, d)
    dot = t @ v_hat  # (B, U, S)
    e = params.g * dot + params.r
    cache = {"s_dec": s_dec, "h_enc": h_enc, "params": params, "t": t, "dot": dot,
             "v_hat": v_hat, "v_norm": v_norm}
    return e, cache


def energy_backward(cache: dict, grad_e: np.ndarray):
    """Backward of `energy_forward`.

    Returns (grad_s_dec, grad_h_enc, grads) with grads keyed ws/wh/b/v/g/r.
    """
    params: MonotonicEnergyParams = cache["params"]
    t = cache["t"]
    dot = cache["dot"]
    v_hat = cache["v_hat"]
    v_norm = cache["v_norm"]
    s_dec = cache["s_dec"]
    h_enc = cache["h_enc"]

    grad_g = float((grad_e * dot).sum())
    grad_r = float(grad_e.sum())
    # direction gradient through the normalization v/|v|
    ge_t = np.einsum("bus,busd->d", grad_e, t)
    grad_v = (params.g / v_norm) * (ge_t - v_hat * float(ge_t @ v_hat))
    grad_t = grad_e[..., None] * (params.g * v_hat)  # (B, U, S, d)
    grad_pre = grad_t * (1.0 - t * t)
    grad_b = grad_pre.sum(axis=(0, 1, 2))
    g_sd = grad_pre.sum(axis=2)  # (B, U, d): each (i, *) row feeds every j
    g_hr = grad_pre.sum(axis=1)  # (B, S, d)
    grad_ws = np.einsum("bum,bud->md", s_dec, g_sd)
    grad_wh = np.einsum("bsm,bsd->md", h_enc, g_hr)
    grad_s_dec = g_sd @ params.ws.T
    grad_h_enc = g_hr @ params.wh.T
    grads = {"ws": grad_ws, "wh": grad_wh, "b": grad_b, "v": grad_v,
             "g": grad_g, "r": grad_r}
    return grad_s_dec, grad_h_enc, grads
