import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkinet.errors import DegenerateVectorError, FrozenParameterError, ProtocolError
from pkinet.nn import (
    OptimizerState,
    Projector,
    cosine_lr,
    init_projector,
    l2_normalize,
    l2_normalize_backward,
    mlp_backward,
    mlp_forward,
    sgd_momentum_step,
    softmax_cross_entropy,
)
from pkinet.rng import SplitMix64


def random_projector(d, h, p, seed):
    rng = SplitMix64(seed)
    return Projector(
        W1=rng.normal((h, d)),
        b1=rng.normal((h,)),
        W2=rng.normal((h, h)),
        b2=rng.normal((h,)),
        W3=rng.normal((p, h)),
        b3=rng.normal((p,)),
    )


# ---------------------------------------------------------------- init


def test_init_deterministic():
    a = init_projector(4, 4, 4, seed=7)
    b = init_projector(4, 4, 4, seed=7)
    for k in a.tensors():
        assert np.array_equal(a.tensors()[k], b.tensors()[k])


def test_init_seed_sensitive():
    a = init_projector(4, 4, 4, seed=7)
    b = init_projector(4, 4, 4, seed=8)
    assert any(
        not np.array_equal(a.tensors()[k], b.tensors()[k]) for k in a.tensors()
    )


def test_init_bounds_and_zero_biases():
    proj = init_projector(64, 64, 64, seed=0)
    for W in (proj.W1, proj.W2, proj.W3):
        assert np.all(np.abs(W) < 1.0 / 8.0)
    for b in (proj.b1, proj.b2, proj.b3):
        assert np.all(b == 0.0)


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_projector(0, 4, 4, seed=1)


# ---------------------------------------------------------------- forward


def test_forward_zero_weights_is_zero_map():
    proj = Projector.zeros(5, 3, 2)
    v, _ = mlp_forward(proj, np.array([1.0, -2.0, 3.0, 4.0, 5.0]))
    assert np.array_equal(v, np.zeros(2))


def test_forward_identity_path():
    d = 6
    eye = np.eye(d)
    proj = Projector(
        W1=eye.copy(), b1=np.zeros(d),
        W2=eye.copy(), b2=np.zeros(d),
        W3=eye.copy(), b3=np.zeros(d),
    )
    f = np.array([0.0, 1.0, 2.5, 0.3, 7.0, 0.1])
    v, _ = mlp_forward(proj, f)
    assert np.array_equal(v, f)


def test_forward_matches_straight_line_recomputation():
    proj = random_projector(5, 7, 3, seed=11)
    f = SplitMix64(99).normal((5,))
    v, _ = mlp_forward(proj, f)
    # independent re-evaluation of the documented composition
    a1 = np.maximum(proj.W1 @ f + proj.b1, 0.0)
    a2 = np.maximum(proj.W2 @ a1 + proj.b2, 0.0)
    expected = proj.W3 @ a2 + proj.b3
    assert np.allclose(v, expected, rtol=0, atol=1e-14)


def test_forward_batch_rows_match_single_vectors():
    # batched matmul may use a different BLAS kernel than a single row;
    # agreement is to rounding, not bitwise
    proj = random_projector(4, 4, 4, seed=2)
    F = SplitMix64(1).normal((6, 4))
    V, _ = mlp_forward(proj, F)
    for i in range(6):
        vi, _ = mlp_forward(proj, F[i])
        assert np.allclose(V[i], vi, rtol=0, atol=1e-12)


def test_forward_dim_mismatch():
    proj = init_projector(4, 4, 4, seed=0)
    with pytest.raises(ValueError):
        mlp_forward(proj, np.ones(5))


# ---------------------------------------------------------------- backward


def test_backward_zero_upstream_gives_zero():
    proj = random_projector(4, 5, 3, seed=3)
    f = SplitMix64(4).normal((4,))
    _, cache = mlp_forward(proj, f)
    grads, df = mlp_backward(proj, cache, np.zeros(3))
    assert all(np.all(g == 0.0) for g in grads.values())
    assert np.all(df == 0.0)


def test_backward_matches_finite_differences():
    proj = random_projector(8, 8, 8, seed=5)
    f = SplitMix64(6).normal((8,))
    dv = SplitMix64(7).normal((8,))
    _, cache = mlp_forward(proj, f)
    grads, df = mlp_backward(proj, cache, dv)

    def objective():
        v, _ = mlp_forward(proj, f)
        return float(v @ dv)

    h = 1e-5
    worst = 0.0
    for name, arr in proj.tensors().items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = objective()
            flat[i] = orig - h
            lo = objective()
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-4))
    # input gradient too
    for i in range(f.size):
        orig = f[i]
        f[i] = orig + h
        hi = objective()
        f[i] = orig - h
        lo = objective()
        f[i] = orig
        fd = (hi - lo) / (2 * h)
        worst = max(worst, abs(fd - df[i]) / max(abs(fd), abs(df[i]), 1e-4))
    assert worst < 1e-4


def test_backward_linear_stack_closed_form():
    # strictly positive pre-activations make the network purely linear
    d = 4
    rng = SplitMix64(8)
    proj = Projector(
        W1=rng.uniform(0.1, 1.0, (d, d)), b1=np.full(d, 5.0),
        W2=rng.uniform(0.1, 1.0, (d, d)), b2=np.full(d, 5.0),
        W3=rng.uniform(0.1, 1.0, (d, d)), b3=np.zeros(d),
    )
    f = rng.uniform(0.1, 1.0, (d,))
    dv = rng.normal((d,))
    v, cache = mlp_forward(proj, f)
    assert np.all(cache.z1 > 0) and np.all(cache.z2 > 0)
    grads, df = mlp_backward(proj, cache, dv)

    # hand-computed linear-network gradients
    a1 = proj.W1 @ f + proj.b1
    a2 = proj.W2 @ a1 + proj.b2
    g3 = dv
    g2 = proj.W3.T @ g3
    g1 = proj.W2.T @ g2
    assert np.allclose(grads["W3"], np.outer(g3, a2), atol=1e-12)
    assert np.allclose(grads["b3"], g3, atol=1e-12)
    assert np.allclose(grads["W2"], np.outer(g2, a1), atol=1e-12)
    assert np.allclose(grads["b2"], g2, atol=1e-12)
    assert np.allclose(grads["W1"], np.outer(g1, f), atol=1e-12)
    assert np.allclose(grads["b1"], g1, atol=1e-12)
    assert np.allclose(df, proj.W1.T @ g1, atol=1e-12)


def test_backward_rejects_mismatched_cache():
    proj = init_projector(4, 4, 4, seed=0)
    other = init_projector(5, 6, 4, seed=0)
    _, cache = mlp_forward(other, np.ones(5))
    with pytest.raises(ProtocolError):
        mlp_backward(proj, cache, np.ones(4))


# ---------------------------------------------------------------- l2


def test_l2_three_four_five():
    vhat, _ = l2_normalize(np.array([3.0, 4.0]))
    assert np.allclose(vhat, [0.6, 0.8], atol=1e-15)


def test_l2_unit_vector_fixed_point():
    v = np.array([1.0, 0.0, 0.0])
    vhat, _ = l2_normalize(v)
    assert np.array_equal(vhat, v)


def test_l2_degenerate_aborts():
    with pytest.raises(DegenerateVectorError):
        l2_normalize(np.zeros(4))


def test_l2_backward_matches_finite_differences():
    v = SplitMix64(10).normal((8,))
    dvhat = SplitMix64(11).normal((8,))
    _, cache = l2_normalize(v)
    dv = l2_normalize_backward(cache, dvhat)
    h = 1e-6
    for i in range(8):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        fd = (l2_normalize(vp)[0] @ dvhat - l2_normalize(vm)[0] @ dvhat) / (2 * h)
        # 1e-3 floor keeps FD round-off noise out of near-zero entries
        assert abs(fd - dv[i]) / max(abs(fd), abs(dv[i]), 1e-3) < 1e-6


@given(st.integers(min_value=0, max_value=2**32))
@settings(max_examples=50, deadline=None)
def test_l2_output_norm_is_one(seed):
    v = SplitMix64(seed).normal((6,)) * 10.0
    vhat, _ = l2_normalize(v)
    assert abs(np.linalg.norm(vhat) - 1.0) <= 1e-12


# ---------------------------------------------------------------- cross-entropy


def test_ce_uniform_logits():
    loss, _ = softmax_cross_entropy(np.zeros(4), 2)
    assert abs(loss - np.log(4.0)) < 1e-12


def test_ce_extreme_logits_stable():
    loss, dlogits = softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert loss < 1e-10
    assert np.all(np.isfinite(dlogits))


def test_ce_rejects_bad_label():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(3), 3)


def test_ce_gradient_matches_finite_differences():
    logits = SplitMix64(12).normal((10,)) * 3.0
    y = 4
    _, dlogits = softmax_cross_entropy(logits, y)
    h = 1e-6
    for i in range(10):
        lp, lm = logits.copy(), logits.copy()
        lp[i] += h
        lm[i] -= h
        fd = (softmax_cross_entropy(lp, y)[0] - softmax_cross_entropy(lm, y)[0]) / (
            2 * h
        )
        assert abs(fd - dlogits[i]) / max(abs(fd), abs(dlogits[i]), 1e-3) < 1e-6


@given(st.integers(min_value=0, max_value=2**32), st.integers(min_value=2, max_value=12))
@settings(max_examples=50, deadline=None)
def test_ce_nonnegative_and_uniform_value(seed, C):
    logits = SplitMix64(seed).normal((C,)) * 5.0
    loss, _ = softmax_cross_entropy(logits, seed % C)
    assert loss >= 0.0
    uniform_loss, _ = softmax_cross_entropy(np.zeros(C), seed % C)
    assert abs(uniform_loss - np.log(C)) < 1e-12


# ---------------------------------------------------------------- optimizer


def test_sgd_first_step_algebra():
    p = {"w": np.array([1.0])}
    state = OptimizerState.for_params(p, momentum=0.9, lr_max=0.1, lr_min=0.0,
                                      total_steps=1)
    sgd_momentum_step(p, {"w": np.array([1.0])}, state, lr=0.1)
    assert np.allclose(p["w"], [0.9], atol=1e-15)
    assert np.allclose(state.velocity["w"], [1.0], atol=1e-15)


def test_sgd_zero_grad_zero_velocity_fixed_point():
    p = {"w": np.array([2.5])}
    state = OptimizerState.for_params(p, 0.9, 0.1, 0.0, 1)
    sgd_momentum_step(p, {"w": np.array([0.0])}, state, lr=0.1)
    assert p["w"][0] == 2.5


def test_sgd_two_steps_constant_gradient():
    mu, lr, g = 0.9, 0.1, 0.7
    p = {"w": np.array([0.0])}
    state = OptimizerState.for_params(p, mu, lr, 0.0, 2)
    sgd_momentum_step(p, {"w": np.array([g])}, state, lr=lr)
    assert np.allclose(p["w"], [-lr * g], atol=1e-15)
    sgd_momentum_step(p, {"w": np.array([g])}, state, lr=lr)
    assert np.allclose(p["w"], [-lr * g - lr * (1 + mu) * g], atol=1e-15)


def test_sgd_shape_mismatch():
    p = {"w": np.ones(3)}
    state = OptimizerState.for_params(p, 0.9, 0.1, 0.0, 1)
    with pytest.raises(ValueError):
        sgd_momentum_step(p, {"w": np.ones(4)}, state, lr=0.1)


def test_sgd_frozen_parameter_rejected():
    w = np.ones(3)
    p = {"w": w}
    state = OptimizerState.for_params(p, 0.9, 0.1, 0.0, 1)
    w.flags.writeable = False
    with pytest.raises(FrozenParameterError):
        sgd_momentum_step(p, {"w": np.ones(3)}, state, lr=0.1)


# ---------------------------------------------------------------- schedule


def test_cosine_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 0.25, 0.0) == 0.25
    assert abs(cosine_lr(100, 100, 0.25, 0.0)) < 1e-17
    assert abs(cosine_lr(50, 100, 0.25, 0.0) - 0.125) < 1e-15


def test_cosine_rejects_step_past_total():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 0.25)
