"""Pooling operators: oracles, invariances, and attention gradients."""

import mpmath as mp
import numpy as np
import pytest

from slidekit.aggregate import (
    GatedAttention,
    GatedAttentionParams,
    SlideBag,
    canonical_row_order,
    gated_attention_pool,
    max_pool,
    mean_pool,
)
from slidekit.errors import EmptyBagError, ShapeError, StateError


def rng(tag):
    return np.random.default_rng(abs(hash(tag)) % (2**32))


def random_params(tag, d=6, h=4):
    r = rng(tag)
    return GatedAttentionParams(
        V=r.normal(size=(h, d)) * 0.5,
        U=r.normal(size=(h, d)) * 0.5,
        w=r.normal(size=h) * 0.5,
    )


# -- bags -------------------------------------------------------------------


def test_slide_bag_validation():
    with pytest.raises(EmptyBagError):
        SlideBag("s0", np.zeros((0, 4)))
    with pytest.raises(ShapeError):
        SlideBag("s1", np.zeros(4))
    with pytest.raises(ShapeError):
        SlideBag("s2", np.array([[1.0, np.inf]]))
    bag = SlideBag("s3", np.arange(6, dtype=np.float32).reshape(2, 3))
    assert bag.features.dtype == np.float64
    assert (bag.n_patches, bag.dim) == (2, 3)


def test_mean_and_max_pool_against_loops():
    r = rng("pool_oracle")
    x = r.normal(size=(9, 5))
    want_mean = [sum(x[i, j] for i in range(9)) / 9 for j in range(5)]
    want_max = [max(x[i, j] for i in range(9)) for j in range(5)]
    np.testing.assert_allclose(mean_pool(x), want_mean, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(max_pool(x), want_max)


def test_pool_rejects_empty_bag():
    with pytest.raises(EmptyBagError):
        mean_pool(np.zeros((0, 3)))
    with pytest.raises(EmptyBagError):
        max_pool(np.zeros((0, 3)))


def test_single_patch_bag_pools_to_itself():
    x = rng("single").normal(size=(1, 7))
    np.testing.assert_array_equal(mean_pool(x), x[0])
    np.testing.assert_array_equal(max_pool(x), x[0])


def test_mean_pool_permutation_invariance():
    r = rng("perm")
    x = r.normal(size=(20, 8))
    perm = r.permutation(20)
    # float64 summation order matters, so permuted input only agrees loosely
    np.testing.assert_allclose(mean_pool(x[perm]), mean_pool(x),
                               rtol=0, atol=1e-10)
    # ... but canonical row order restores bitwise equality
    a = x[canonical_row_order(x)]
    b = x[perm][canonical_row_order(x[perm])]
    np.testing.assert_array_equal(mean_pool(a), mean_pool(b))
    # max pooling is order-free outright
    np.testing.assert_array_equal(max_pool(x[perm]), max_pool(x))


def test_canonical_row_order_sorts_lexicographically():
    x = np.array([[1.0, 2.0], [0.0, 9.0], [1.0, 0.0]])
    order = canonical_row_order(x)
    rows = [tuple(row) for row in x[order]]
    assert rows == sorted(rows)


# -- gated attention ---------------------------------------------------------


def test_attention_weights_form_a_distribution():
    params = random_params("att_dist")
    x = rng("att_dist_x").normal(size=(12, 6))
    pooled, attention = gated_attention_pool(params, x)
    assert attention.shape == (12,)
    assert attention.min() > 0
    np.testing.assert_allclose(attention.sum(), 1.0, rtol=0, atol=1e-12)
    assert pooled.shape == (6,)
    # pooled output is a convex combination, so it stays in the column hull
    assert (pooled <= x.max(axis=0) + 1e-12).all()
    assert (pooled >= x.min(axis=0) - 1e-12).all()


def test_zero_score_vector_gives_uniform_attention_and_mean():
    params = random_params("att_zero")
    params.w[:] = 0.0
    x = rng("att_zero_x").normal(size=(8, 6))
    pooled, attention = gated_attention_pool(params, x)
    np.testing.assert_allclose(attention, np.full(8, 1.0 / 8.0), rtol=0, atol=1e-15)
    np.testing.assert_allclose(pooled, mean_pool(x), rtol=0, atol=1e-15)


def test_single_patch_attention_is_identity():
    params = random_params("att_one")
    x = rng("att_one_x").normal(size=(1, 6))
    pooled, attention = gated_attention_pool(params, x)
    np.testing.assert_array_equal(attention, [1.0])
    np.testing.assert_array_equal(pooled, x[0])


def test_attention_against_50_digit_reference():
    params = random_params("att_mp", d=4, h=3)
    x = rng("att_mp_x").normal(size=(5, 4))
    pooled, attention = gated_attention_pool(params, x)

    scores = []
    for i in range(5):
        gated = [
            mp.tanh(mp.fsum(mp.mpf(params.V[h, j]) * mp.mpf(x[i, j]) for j in range(4)))
            * (1 / (1 + mp.e**(-mp.fsum(mp.mpf(params.U[h, j]) * mp.mpf(x[i, j])
                                        for j in range(4)))))
            for h in range(3)
        ]
        scores.append(mp.fsum(mp.mpf(params.w[h]) * gated[h] for h in range(3)))
    exps = [mp.e**(s - max(scores)) for s in scores]
    total = mp.fsum(exps)
    want_att = [float(e / total) for e in exps]
    want_pooled = [
        float(mp.fsum((exps[i] / total) * mp.mpf(x[i, j]) for i in range(5)))
        for j in range(4)
    ]
    np.testing.assert_allclose(attention, want_att, rtol=0, atol=1e-14)
    np.testing.assert_allclose(pooled, want_pooled, rtol=0, atol=1e-13)


def test_attention_shape_checks_and_state():
    params = random_params("att_shape")
    layer = GatedAttention(params)
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((3, 5)))  # dim 5 vs parameter dim 6
    with pytest.raises(StateError):
        layer.backward(np.zeros(6))


def test_attention_backward_matches_finite_differences():
    params = random_params("att_fd", d=5, h=3)
    r = rng("att_fd_x")
    x = r.normal(size=(7, 5))
    v = r.normal(size=5)  # probe direction; loss = v . pooled

    def loss():
        pooled, _ = gated_attention_pool(params, x)
        return float(pooled @ v)

    layer = GatedAttention(params)
    pooled, _ = layer.forward(x)
    g_features = layer.backward(v)

    h = 1e-6
    # feature gradient
    num = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + h
            up = loss()
            x[i, j] = orig - h
            dn = loss()
            x[i, j] = orig
            num[i, j] = (up - dn) / (2 * h)
    np.testing.assert_allclose(g_features, num, rtol=1e-5, atol=1e-8)
    # parameter gradients
    for value, grad in [(params.V, params.grad_V), (params.U, params.grad_U),
                        (params.w, params.grad_w)]:
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss()
            flat[idx] = orig - h
            dn = loss()
            flat[idx] = orig
            np.testing.assert_allclose(gflat[idx], (up - dn) / (2 * h),
                                       rtol=1e-4, atol=1e-8)


def test_attention_backward_accumulates():
    params = random_params("att_acc")
    x = rng("att_acc_x").normal(size=(4, 6))
    layer = GatedAttention(params)
    layer.forward(x)
    layer.backward(np.ones(6))
    first = params.grad_w.copy()
    layer.forward(x)
    layer.backward(np.ones(6))
    np.testing.assert_allclose(params.grad_w, 2 * first, rtol=1e-12, atol=1e-15)
    params.zero_grad()
    assert params.grad_w.max() == 0.0
