import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lmulm.errors import DimensionError
from lmulm.numerics import ops
from lmulm.numerics.tensor import Tensor, counting
from lmulm.training import finite_diff_check

from .conftest import rel_err


def triple_loop(a, b):
    m, k = a.shape
    p = b.shape[1]
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for l in range(k):
                s += a[i, l] * b[l, j]
            out[i, j] = s
    return out


# matmul

def test_matmul_identity():
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(np.eye(2), B).data, B)


def test_matmul_hand_example():
    out = ops.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_random_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_array_equal(ops.matmul(a, b).data, triple_loop(a, b))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_bitwise_oracle(m, k, p, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(m, k)), r.normal(size=(k, p))
    np.testing.assert_array_equal(ops.matmul_array(a, b), triple_loop(a, b))


def test_matmul_batched_rows_independent_of_batch(rng):
    a, b = rng.normal(size=(4, 3, 5)), rng.normal(size=(5, 2))
    full = ops.matmul_array(a, b)
    for t in range(4):
        np.testing.assert_array_equal(full[t], ops.matmul_array(a[t], b))


def test_matmul_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_flops():
    with counting() as c:
        ops.matmul(np.zeros((3, 4)), np.zeros((4, 5)))
    assert c.total == 2 * 3 * 4 * 5


# softmax

def test_softmax_symmetric():
    np.testing.assert_allclose(ops.softmax_rows(np.zeros((1, 2))).data, [[0.5, 0.5]])


@given(hnp.arrays(np.float64, (3, 7), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(a, c):
    p = ops.softmax_rows(a).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ops.softmax_rows(a + c).data, p, atol=1e-12)


def test_softmax_mask_zeroes_entries(rng):
    mask = np.tril(np.ones((4, 4), dtype=bool))
    p = ops.softmax_rows(rng.normal(size=(4, 4)), mask=mask).data
    assert np.all(p[~mask] == 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_attend_equals_softmax_times_values(rng):
    s, v = rng.normal(size=(5, 5)), rng.normal(size=(5, 3))
    want = ops.softmax_rows(s).data @ v
    assert rel_err(ops.attend(s, v).data, want) <= 1e-13


def test_attend_sections(rng):
    c, d = 4, 8
    with counting() as k:
        ops.attend(rng.normal(size=(c, c)), rng.normal(size=(c, d)))
    assert k.sections["m_prime"] == 2 * d * c * c + d * c
    assert k.sections["softmax"] == c * (3 * c - 1)


# gelu and layer norm

def test_gelu_values():
    assert ops.gelu(np.array([0.0])).data[0] == 0.0
    assert abs(ops.gelu(np.array([1.0])).data[0] - 0.841345) < 1e-5
    x = np.linspace(8, 20, 7)
    assert np.abs(ops.gelu(x).data - x).max() < 1e-6


def test_layer_norm_constant_vector():
    out = ops.layer_norm(np.full((1, 6), 3.0), np.ones(6), np.zeros(6))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_moments(rng):
    x = rng.normal(2.0, 10.0, size=(5, 64))
    out = ops.layer_norm(x, np.ones(64), np.zeros(64)).data
    assert np.abs(out.mean(axis=1)).max() <= 1e-10
    assert np.abs(out.var(axis=1) - 1).max() <= 1e-6
    # the epsilon shrinks the variance to v / (v + eps) exactly
    v = x.var(axis=1)
    np.testing.assert_allclose(out.var(axis=1), v / (v + ops.LN_EPS), rtol=1e-12)


@given(st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
def test_layer_norm_scale_invariant(alpha, seed):
    x = np.random.default_rng(seed).normal(size=(2, 16))
    g, b = np.ones(16), np.zeros(16)
    a = ops.layer_norm(alpha * x, g, b).data
    # exact up to the epsilon, which scales with alpha^2
    np.testing.assert_allclose(a, ops.layer_norm(x, g, b, eps=ops.LN_EPS / alpha**2).data, rtol=1e-10, atol=1e-12)
    if alpha >= 1:
        np.testing.assert_allclose(a, ops.layer_norm(x, g, b).data, atol=1e-4)


def test_layer_norm_shape_check():
    with pytest.raises(DimensionError):
        ops.layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(3))


# convolution

def test_causal_conv_matches_direct(rng):
    n, d, r = 16, 3, 2
    x, k = rng.normal(size=(n, d)), rng.normal(size=(r, n))
    y = ops.causal_conv(x, k).data
    want = np.zeros((n, r, d))
    for t in range(n):
        for tau in range(t + 1):
            want[t] += k[:, tau, None] * x[t - tau][None, :]
    assert rel_err(y, want) <= 1e-12


def test_causal_conv_shape_check():
    with pytest.raises(DimensionError):
        ops.causal_conv(np.zeros((8, 2)), np.zeros((3, 4)))


# cross-entropy

def test_cross_entropy_uniform():
    mean, per = ops.cross_entropy(np.zeros((5, 7)), np.arange(5) % 7)
    np.testing.assert_allclose(per, math.log(7))
    assert abs(float(mean.data) - math.log(7)) < 1e-12


def test_cross_entropy_mask():
    logits = np.zeros((4, 3))
    mean, per = ops.cross_entropy(logits, np.zeros(4, int), mask=np.array([1, 1, 0, 0], bool))
    assert np.isnan(per[2:]).all() and np.isfinite(per[:2]).all()


# gradients of each op against central differences

def _params(rng, **shapes):
    return {k: Tensor(rng.normal(size=s), requires_grad=True) for k, s in shapes.items()}


GRAD_CASES = {
    "matmul": (dict(a=(3, 4), b=(4, 2)), lambda p: ops.matmul(p["a"], p["b"])),
    "batched_matmul": (dict(a=(2, 3, 4), b=(4, 2)), lambda p: ops.matmul(p["a"], p["b"])),
    "gelu": (dict(a=(3, 5)), lambda p: ops.gelu(p["a"])),
    "layer_norm": (dict(a=(3, 6), g=(6,), b=(6,)), lambda p: ops.layer_norm(p["a"], p["g"], p["b"])),
    "softmax": (dict(a=(3, 4)), lambda p: ops.softmax_rows(p["a"])),
    "attend": (dict(s=(3, 3), v=(3, 2)), lambda p: ops.attend(p["s"], p["v"])),
    "causal_conv": (dict(x=(8, 2), k=(3, 8)), lambda p: ops.causal_conv(p["x"], p["k"])),
    "index_concat": (dict(a=(4, 3)), lambda p: ops.concat([ops.index(p["a"], slice(2, 4)), ops.index(p["a"], slice(0, 2))])),
    "broadcast_add": (dict(a=(3, 4), b=(4,)), lambda p: ops.add(p["a"], p["b"])),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_op_gradients(rng, name):
    shapes, f = GRAD_CASES[name]
    params = _params(rng, **shapes)
    w = None

    def loss():
        nonlocal w
        y = f(params)
        if w is None:
            w = np.random.default_rng(7).normal(size=y.shape)
        return ops.sum_all(ops.mul(y, w))

    report = finite_diff_check(loss, params)
    assert max(report.values()) <= 1e-7, report


def test_embedding_gradient_accumulates_repeats(rng):
    E = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    report = finite_diff_check(lambda: ops.sum_all(ops.gelu(ops.embedding(E, [1, 1, 4]))), {"E": E})
    assert report["E"] <= 1e-7


def test_cross_entropy_gradient(rng):
    z = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    t = np.array([0, 5, 2, 2])
    m = np.array([1, 0, 1, 1], bool)
    report = finite_diff_check(lambda: ops.cross_entropy(z, t, m), {"z": z})
    assert report["z"] <= 1e-7
