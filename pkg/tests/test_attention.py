"""Attention tests: examples, masking, stats, and FD through the full layer."""

import numpy as np
import pytest

from entmono import attention as A
from entmono import transforms as T
from oracles import dense_attention_reference


def _cfg(kind, **kw):
    return A.HeadNormalizerConfig(kind=kind, **kw)


ALL_KIND_CFGS = [
    _cfg("softmax"),
    _cfg("softmax-temperature", temp=T.Temperature(0.7)),
    _cfg("sparsemax"),
    _cfg("entmax-fixed", alpha=T.AlphaParameter(0.0)),
    _cfg("entmax-adaptive", alpha=T.AlphaParameter(0.3)),
]


def test_sinusoidal_pe_examples():
    pe = A.sinusoidal_pe(100, 16)
    assert np.allclose(pe[0, 0::2], 0.0) and np.allclose(pe[0, 1::2], 1.0)
    assert np.all(pe >= -1.0) and np.all(pe <= 1.0)
    for d in (4, 16, 64):
        assert A.sinusoidal_pe(3, d)[1, 0] == pytest.approx(np.sin(1.0))
    with pytest.raises(ValueError):
        A.sinusoidal_pe(10, 15)  # odd width


def test_project_qkv():
    w = A.ProjectionWeights.random(d_model=4, h=2, seed=0)
    x = np.zeros((3, 4))
    q, k, v = A.project_qkv(x, w, 0)
    assert q.shape == k.shape == v.shape == (3, 2)
    assert np.all(q == 0) and np.all(k == 0) and np.all(v == 0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4))
    q, k, v = A.project_qkv(x, w, 1)
    assert np.allclose(q, x @ w.wq[1])
    with pytest.raises(ValueError):
        A.project_qkv(x, w, 2)
    with pytest.raises(ValueError):
        A.project_qkv(np.zeros((3, 5)), w, 0)


def test_projection_weights_validation():
    with pytest.raises(ValueError):
        A.ProjectionWeights.random(d_model=5, h=2, seed=0)
    ok = A.ProjectionWeights.random(d_model=4, h=2, seed=0)
    with pytest.raises(ValueError):
        A.ProjectionWeights(wq=ok.wq, wk=ok.wk, wv=ok.wv, wo=np.zeros((3, 4)))
    bad = ok.wq.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        A.ProjectionWeights(wq=bad, wk=ok.wk, wv=ok.wv, wo=ok.wo)
    b = 1.0 / np.sqrt(4)
    assert np.all(np.abs(ok.wq) <= b)


def test_head_normalizer_config_validation():
    with pytest.raises(ValueError):
        _cfg("gumbel")
    with pytest.raises(ValueError):
        _cfg("softmax-temperature")  # temp missing
    with pytest.raises(ValueError):
        _cfg("softmax", temp=T.Temperature(2.0))  # temp not allowed
    with pytest.raises(ValueError):
        _cfg("entmax-fixed")  # alpha missing
    with pytest.raises(ValueError):
        _cfg("sparsemax", alpha=T.AlphaParameter(0.0))
    assert _cfg("softmax").effective_alpha == 1.0
    assert _cfg("sparsemax").effective_alpha == 2.0
    assert _cfg("entmax-fixed", alpha=T.AlphaParameter(0.0)).effective_alpha == 1.5


def test_attention_head_examples():
    # single key: weight 1, output = V
    out, wt = A.attention_head(np.array([[2.0]]), np.array([[1.0]]), np.array([[3.5]]), _cfg("softmax"))
    assert wt[0, 0] == 1.0 and out[0, 0] == 3.5
    # d=1 two-position example, softmax then sparsemax on scores [1, 0]
    q = np.array([[1.0], [0.0]])
    k = np.array([[1.0], [0.0]])
    v = np.array([[1.0], [2.0]])
    out, wt = A.attention_head(q, k, v, _cfg("softmax"))
    assert np.allclose(wt[0], [0.731, 0.269], atol=1e-3)
    assert out[0, 0] == pytest.approx(1.269, abs=1e-3)
    out, wt = A.attention_head(q, k, v, _cfg("sparsemax"))
    assert np.allclose(wt[0], [1.0, 0.0])
    assert out[0, 0] == 1.0


def test_attention_head_masking():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(4, 3))
    k = rng.normal(size=(5, 3))
    v = rng.normal(size=(5, 3))
    allowed = np.ones((4, 5), dtype=bool)
    allowed[0, 2:] = False
    allowed[2, :2] = False
    mask = A.AttentionMask(allowed)
    for cfg in ALL_KIND_CFGS:
        out, wt = A.attention_head(q, k, v, cfg, mask)
        assert np.all(wt[~allowed] == 0.0)  # exact zeros, not small values
        assert np.allclose(wt.sum(axis=1), 1.0, atol=1e-9)
        # each output row is a convex combination of allowed V rows
        for r in range(4):
            lo = v[allowed[r]].min(axis=0) - 1e-12
            hi = v[allowed[r]].max(axis=0) + 1e-12
            assert np.all(out[r] >= lo) and np.all(out[r] <= hi)
    with pytest.raises(ValueError):
        A.AttentionMask(np.zeros((2, 2), dtype=bool))  # empty row
    with pytest.raises(ValueError):
        A.attention_head(q, k, v, _cfg("softmax"), A.AttentionMask.full(3, 5))


def test_masked_normalization_is_domain_restriction():
    # masking then normalizing == normalizing the restricted score vector
    rng = np.random.default_rng(3)
    q = rng.normal(size=(1, 4))
    k = rng.normal(size=(6, 4))
    v = np.eye(6)
    allowed = np.array([[True, False, True, True, False, True]])
    scores = (q @ k.T / 2.0)[0]
    _, wt = A.attention_head(q, k, v, _cfg("sparsemax"), A.AttentionMask(allowed))
    ref = T.sparsemax(scores[allowed[0]]).probs
    assert np.allclose(wt[0, allowed[0]], ref, atol=1e-12)


def test_multi_head_matches_dense_reference():
    rng = np.random.default_rng(4)
    w = A.ProjectionWeights.random(d_model=8, h=2, seed=5)
    x = rng.normal(size=(5, 8))
    out = A.multi_head(x, w, [_cfg("softmax"), _cfg("softmax")])
    ref = dense_attention_reference(x, w.wq, w.wk, w.wv, w.wo)
    assert np.allclose(out.context, ref, atol=1e-9)


def test_multi_head_identity_wo_single_head():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    w = A.ProjectionWeights.random(d_model=4, h=1, seed=6)
    w = A.ProjectionWeights(wq=w.wq, wk=w.wk, wv=w.wv, wo=np.eye(4))
    out = A.multi_head(x, w, [_cfg("softmax")])
    head_out, _ = A.attention_head(*A.project_qkv(x, w, 0), _cfg("softmax"))
    assert np.allclose(out.context, head_out)


def test_multi_head_zero_input_uniform_weights():
    w = A.ProjectionWeights.random(d_model=6, h=2, seed=7)
    x = np.zeros((4, 6))
    out = A.multi_head(x, w, [_cfg("softmax"), _cfg("sparsemax")])
    for wt in out.weights:
        assert np.allclose(wt, 0.25, atol=1e-12)


def test_multi_head_sparsity_ordering():
    # identical projections, alpha=1 vs alpha=2: sparsemax has >= as many zeros
    rng = np.random.default_rng(8)
    x = rng.normal(size=(6, 8)) * 2
    w1 = A.ProjectionWeights.random(d_model=8, h=2, seed=9)
    wq = np.stack([w1.wq[0], w1.wq[0]])
    wk = np.stack([w1.wk[0], w1.wk[0]])
    wv = np.stack([w1.wv[0], w1.wv[0]])
    w = A.ProjectionWeights(wq=wq, wk=wk, wv=wv, wo=w1.wo)
    out = A.multi_head(x, w, [_cfg("softmax"), _cfg("sparsemax")])
    zeros_soft = (out.weights[0] == 0).sum()
    zeros_sparse = (out.weights[1] == 0).sum()
    assert zeros_soft == 0
    assert zeros_sparse >= zeros_soft


def test_qk_rescaling_invariance():
    rng = np.random.default_rng(10)
    q = rng.normal(size=(3, 4))
    k = rng.normal(size=(5, 4))
    v = rng.normal(size=(5, 4))
    c = 3.7
    for cfg in ALL_KIND_CFGS:
        out1, wt1 = A.attention_head(q, k, v, cfg)
        out2, wt2 = A.attention_head(c * q, k / c, v, cfg)
        assert np.allclose(wt1, wt2, atol=1e-9)
        assert np.allclose(out1, out2, atol=1e-9)


def test_head_score_stats():
    # hand-built output: uniform rows and one-hot rows
    uniform = np.full((3, 4), 0.25)
    onehot = np.zeros((3, 4))
    onehot[:, 1] = 1.0
    out = A.AttentionOutput(
        context=np.zeros((3, 4)),
        weights=(uniform, onehot),
        mask=A.AttentionMask.full(3, 4),
    )
    st = A.head_score_stats(out)
    assert st[0].mean_entropy == pytest.approx(np.log(4))
    assert st[0].zero_fraction == 0.0
    assert st[1].mean_entropy == pytest.approx(0.0)
    assert st[1].zero_fraction == pytest.approx(3 / 4)
    assert st[0].histogram.sum() == 12 and st[1].histogram.sum() == 12
    assert st[1].histogram[-1] == 3  # the ones land in the top bin
    # stats property delegates
    assert out.stats[0].zero_fraction == 0.0


def test_softmax_head_zero_fraction_always_zero():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(6, 8)) * 3
    w = A.ProjectionWeights.random(d_model=8, h=2, seed=12)
    out = A.multi_head(x, w, [_cfg("softmax"), _cfg("softmax-temperature", temp=T.Temperature(0.5))])
    for st in out.stats:
        assert st.zero_fraction == 0.0


def test_mha_forward_matches_multi_head():
    rng = np.random.default_rng(13)
    w = A.ProjectionWeights.random(d_model=8, h=4, seed=14)
    cfgs = [
        _cfg("entmax-adaptive", alpha=T.AlphaParameter(0.0)),
        _cfg("entmax-fixed", alpha=T.AlphaParameter(0.0)),
        _cfg("sparsemax"),
        _cfg("softmax"),
    ]
    x = rng.normal(size=(3, 5, 8))
    ctx, cache = A.mha_forward(x, w, cfgs)
    for b in range(3):
        ref = A.multi_head(x[b], w, cfgs)
        assert np.allclose(ctx[b], ref.context, atol=1e-12)
        for i in range(4):
            assert np.allclose(cache["heads"][i][4][b], ref.weights[i], atol=1e-12)


def _layer_loss_and_grads(x, w, cfgs, direction):
    ctx, cache = A.mha_forward(x, w, cfgs)
    loss = float((ctx * direction).sum())
    grad_x, grads = A.mha_backward(cache, direction)
    return loss, grad_x, grads


def _fd(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def test_layer_gradient_matches_fd(kernel_backend):
    # all normalizer kinds at once, d_model=8, T=4, B=2; seed chosen so every
    # sparse row keeps a comfortable support margin (FD needs smoothness)
    rng = np.random.default_rng(1)
    d_model, h, t, b = 8, 4, 4, 2
    w = A.ProjectionWeights.random(d_model=d_model, h=h, seed=18)
    cfgs = [
        _cfg("entmax-adaptive", alpha=T.AlphaParameter(0.2)),
        _cfg("entmax-fixed", alpha=T.AlphaParameter(0.0)),
        _cfg("sparsemax"),
        _cfg("softmax-temperature", temp=T.Temperature(0.8)),
    ]
    x = rng.normal(size=(b, t, d_model))
    direction = rng.normal(size=(b, t, d_model))

    # margin check: every sparse head row must be away from a support change
    ctx, cache = A.mha_forward(x, w, cfgs)
    for i, cfg in enumerate(cfgs):
        if cfg.kind in ("sparsemax", "entmax-fixed", "entmax-adaptive"):
            probs = cache["heads"][i][4]
            on = probs > 0
            assert probs[on].min() > 1e-3, "test instance too close to a support boundary"

    loss0, grad_x, grads = _layer_loss_and_grads(x, w, cfgs, direction)

    def loss_fn():
        return _layer_loss_and_grads(x, w, cfgs, direction)[0]

    fd_x = _fd(loss_fn, x)
    rel = np.linalg.norm(grad_x - fd_x) / max(np.linalg.norm(fd_x), 1e-12)
    assert rel <= 1e-4, f"x gradient rel err {rel}"

    for name in ("wq", "wk", "wv", "wo"):
        arr = getattr(w, name)
        fd_g = _fd(loss_fn, arr)
        got = grads[name]
        rel = np.linalg.norm(got - fd_g) / max(np.linalg.norm(fd_g), 1e-12)
        assert rel <= 1e-4, f"{name} gradient rel err {rel}"

    # alpha pre-parameter of the adaptive head, via FD on the config
    eps = 1e-6
    pre0 = cfgs[0].alpha.pre

    def loss_at(pre):
        cfgs2 = list(cfgs)
        cfgs2[0] = _cfg("entmax-adaptive", alpha=T.AlphaParameter(pre))
        ctx2, _ = A.mha_forward(x, w, cfgs2)
        return float((ctx2 * direction).sum())

    fd_alpha = (loss_at(pre0 + eps) - loss_at(pre0 - eps)) / (2 * eps)
    rel = abs(grads["alpha_pre"][0] - fd_alpha) / max(abs(fd_alpha), 1e-12)
    assert rel <= 1e-4, f"alpha_pre rel err {rel}"
    assert np.all(grads["alpha_pre"][1:] == 0.0)  # only the adaptive head moves
