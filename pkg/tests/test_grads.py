"""Gradient tests: analytic VJPs and the alpha derivative vs the FD oracle."""

import numpy as np
import pytest

from entmono import grads as G
from entmono import transforms as T


def _ctx(dist, z=None):
    return G.BackwardContext.from_distribution(dist, z=z)


def _rel_err(got, ref):
    denom = max(float(np.linalg.norm(ref)), 1e-12)
    return float(np.linalg.norm(got - ref)) / denom


def _sample_with_margin(rng, make_dist, n_lo=2, n_hi=16, margin=1e-3, scale=2.0):
    """Draw z until the resulting support is at least `margin` from changing."""
    while True:
        n = int(rng.integers(n_lo, n_hi + 1))
        z = rng.normal(size=n) * scale
        d = make_dist(z)
        if G.support_margin(d, z) > margin:
            return z, d


def test_softmax_vjp_examples():
    ctx = _ctx(T.softmax([0, 0]))
    assert np.allclose(G.softmax_vjp(ctx, [1, 0]), [0.25, -0.25], atol=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=6)
        ctx = _ctx(T.softmax(z))
        c = rng.uniform(-3, 3)
        assert np.allclose(G.softmax_vjp(ctx, np.full(6, c)), 0.0, atol=1e-12)
    one_hot = T.SparseDistribution(np.array([1.0, 0.0, 0.0]), (0,), None, 1.0)
    g = G.softmax_vjp(G.BackwardContext(one_hot, 1.0), [3.0, -1.0, 2.0])
    assert np.abs(g).max() <= 1e-9


def test_sparsemax_vjp_examples():
    ctx = _ctx(T.sparsemax([1.5, 0]))  # saturated: p = [1, 0]
    assert np.allclose(G.sparsemax_vjp(ctx, [1, 0]), [0, 0], atol=1e-12)
    ctx = _ctx(T.sparsemax([0.6, 0.4]))
    got = G.sparsemax_vjp(ctx, [1, 0])
    jac = G.finite_difference_jacobian("sparsemax", np.array([0.6, 0.4]))
    assert np.allclose(got, np.array([1.0, 0.0]) @ jac, atol=1e-9)
    assert np.allclose(got, [0.5, -0.5], atol=1e-9)
    ctx = _ctx(T.sparsemax([0.1, 0.2, 0.15]))  # full support
    assert np.allclose(G.sparsemax_vjp(ctx, np.ones(3)), 0.0, atol=1e-12)


def test_entmax_vjp_examples():
    d = T.entmax15_exact([1, 0])
    got = G.entmax_vjp(_ctx(d), [1, 0])
    assert np.allclose(got, [0.2834, -0.2834], atol=1e-4)
    jac = G.finite_difference_jacobian("entmax", np.array([1.0, 0.0]), alpha=1.5)
    assert _rel_err(got, np.array([1.0, 0.0]) @ jac) <= 1e-5

    rng = np.random.default_rng(1)
    for _ in range(20):
        z = rng.normal(size=7) * 2
        d2 = T.sparsemax(z)
        ctx2 = _ctx(d2)
        v = rng.normal(size=7)
        assert np.allclose(
            G.entmax_vjp(ctx2, v), G.sparsemax_vjp(ctx2, v), atol=1e-9
        )
        dj = T.entmax_bisect(z, 1.4)
        assert np.allclose(G.entmax_vjp(_ctx(dj), np.full(7, 2.5)), 0.0, atol=1e-8)


def test_vjp_outputs_sum_to_zero():
    rng = np.random.default_rng(2)
    for _ in range(50):
        z = rng.normal(size=9) * 2
        v = rng.normal(size=9) * 3
        assert abs(G.softmax_vjp(_ctx(T.softmax(z)), v).sum()) <= 1e-9
        assert abs(G.sparsemax_vjp(_ctx(T.sparsemax(z)), v).sum()) <= 1e-8
        assert abs(G.entmax_vjp(_ctx(T.entmax15_exact(z)), v).sum()) <= 1e-8
        assert abs(G.entmax_vjp(_ctx(T.entmax_bisect(z, 1.8)), v).sum()) <= 1e-8


def test_vjp_linearity():
    rng = np.random.default_rng(3)
    for _ in range(30):
        z = rng.normal(size=8)
        v1 = rng.normal(size=8)
        v2 = rng.normal(size=8)
        c = float(rng.uniform(-2, 2))
        for vjp, dist in (
            (G.softmax_vjp, T.softmax(z)),
            (G.sparsemax_vjp, T.sparsemax(z)),
            (G.entmax_vjp, T.entmax15_exact(z)),
        ):
            ctx = _ctx(dist)
            lhs = vjp(ctx, v1 + c * v2)
            rhs = vjp(ctx, v1) + c * vjp(ctx, v2)
            assert np.allclose(lhs, rhs, atol=1e-10)


def test_vjp_matches_fd_with_margin_filter(kernel_backend):
    rng = np.random.default_rng(4)
    cases = [
        ("softmax", dict(), T.softmax, G.softmax_vjp, 1e-5),
        ("sparsemax", dict(), T.sparsemax, G.sparsemax_vjp, 1e-5),
        ("entmax15", dict(), T.entmax15_exact, G.entmax_vjp, 1e-4),
        ("entmax", dict(alpha=1.7), lambda z: T.entmax_bisect(z, 1.7), G.entmax_vjp, 1e-4),
    ]
    for tag, params, fwd, vjp, tol in cases:
        for _ in range(25):
            z, d = _sample_with_margin(rng, fwd)
            jac = G.finite_difference_jacobian(tag, z, eps=1e-5, **params)
            v = rng.normal(size=z.size)
            got = vjp(_ctx(d), v)
            assert _rel_err(got, v @ jac) <= tol, f"{tag} at {z}"


def test_alpha_grad_examples():
    # uniform logits: p stays uniform for every alpha
    ctx = _ctx(T.entmax15_exact([2, 2, 2]), z=[2, 2, 2])
    assert np.allclose(G.entmax_alpha_grad(ctx), 0.0, atol=1e-12)
    # z=[1,0]: value pinned by the FD oracle
    ctx = _ctx(T.entmax15_exact([1, 0]), z=[1, 0])
    got = G.entmax_alpha_grad(ctx)
    assert got[0] > 0 > got[1]
    fd = G.finite_difference_alpha(np.array([1.0, 0.0]), 1.5, eps=1e-4)
    assert _rel_err(got, fd) <= 1e-4
    # saturated support: p constant in a neighborhood of alpha
    ctx = _ctx(T.entmax15_exact([10, 0]), z=[10, 0])
    assert np.allclose(G.entmax_alpha_grad(ctx), 0.0, atol=1e-12)


def test_alpha_grad_matches_fd_randomized():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 17))
        z = rng.normal(size=n) * 2
        alpha = float(rng.uniform(1.05, 2.0))
        d = T.entmax_bisect(z, alpha, iters=100)
        if G.support_margin(d, z) <= 1e-3:
            continue
        ctx = G.BackwardContext(probs=d, alpha=alpha, z=z)
        got = G.entmax_alpha_grad(ctx)
        fd = G.finite_difference_alpha(z, alpha, eps=1e-4)
        assert _rel_err(got, fd) <= 1e-4, f"alpha={alpha} z={z}"
        assert abs(got.sum()) <= 1e-6
        checked += 1


def test_alpha_grad_zero_off_support():
    z = np.array([3.0, 0.1, 0.0, -2.0])
    d = T.entmax15_exact(z)
    assert len(d.support) < z.size
    g = G.entmax_alpha_grad(_ctx(d, z=z))
    off = np.setdiff1d(np.arange(z.size), d.support)
    assert np.all(g[off] == 0.0)


def test_fd_jacobian_examples():
    jac = G.finite_difference_jacobian("softmax", np.array([0.0, 0.0]))
    assert np.allclose(jac, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-9)
    # locally constant inside the saturated region; note z=[1,0] itself sits
    # exactly on the support boundary (gap = 1), so probe strictly inside
    jac = G.finite_difference_jacobian("sparsemax", np.array([1.5, 0.0]))
    assert np.abs(jac).max() <= 1e-9
    # column consistency: FD columns vs VJP on basis vectors
    z = np.array([1.0, 0.0])
    jac = G.finite_difference_jacobian("entmax15", z)
    ctx = _ctx(T.entmax15_exact(z))
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        assert _rel_err(G.entmax_vjp(ctx, e), e @ jac) <= 1e-4


def test_fd_jacobian_accepts_callable():
    z = np.array([0.5, -0.5, 0.0])
    jac_tag = G.finite_difference_jacobian("softmax", z)
    jac_fn = G.finite_difference_jacobian(lambda w: T.softmax(w).probs, z)
    assert np.allclose(jac_tag, jac_fn, atol=1e-12)


def test_error_paths():
    d = T.entmax15_exact([1, 0])
    with pytest.raises(RuntimeError):
        G.entmax_alpha_grad(_ctx(d))  # z not retained
    with pytest.raises(ValueError):
        G.entmax_vjp(G.BackwardContext(T.softmax([1, 0]), alpha=1.0), [1, 0])
    with pytest.raises(ValueError):
        G.entmax_alpha_grad(G.BackwardContext(d, alpha=2.5, z=np.array([1.0, 0.0])))
    with pytest.raises(ValueError):
        G.softmax_vjp(_ctx(T.softmax([1, 0])), [1, 0, 0])  # length mismatch
    with pytest.raises(ValueError):
        G.sparsemax_vjp(_ctx(T.sparsemax([1, 0])), [np.nan, 0.0])
    with pytest.raises(ValueError):
        G.finite_difference_jacobian("softmax", [1, 0], eps=0.0)
    with pytest.raises(ValueError):
        G.finite_difference_jacobian("nope", [1, 0])
    with pytest.raises(ValueError):
        G.transform_fn("entmax")  # alpha required


def test_backward_context_records_forward_alpha():
    d = T.entmax_bisect([1, 0, 2], 1.75)
    ctx = G.BackwardContext.from_distribution(d, z=[1, 0, 2])
    assert ctx.alpha == d.alpha == 1.75
    assert ctx.z is not None and ctx.z.dtype == np.float64
