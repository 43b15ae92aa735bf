import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from targetdrop import tensor as T
from targetdrop.gradcheck import check_ops, numeric_grad, rel_error
from oracles import brute_argmax

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_global_avg_pool_examples():
    assert np.array_equal(T.global_avg_pool(np.full((3, 5, 2), 3.0)), [3.0, 3.0])
    assert np.array_equal(T.global_avg_pool(np.zeros((4, 4, 2))), [0.0, 0.0])
    u = np.zeros((2, 2, 1))
    u[:, :, 0] = [[1, 2], [3, 4]]
    assert T.global_avg_pool(u)[0] == 2.5


def test_global_avg_pool_batch_and_degenerate():
    u = np.arange(2 * 3 * 3 * 2, dtype=float).reshape(2, 3, 3, 2)
    assert np.allclose(T.global_avg_pool(u), u.mean(axis=(1, 2)))
    with pytest.raises(T.ShapeError, match="degenerate"):
        T.global_avg_pool(np.zeros((0, 3, 2)))


@given(hnp.arrays(np.float64, (3, 4, 2), elements=finite), hnp.arrays(np.float64, (3, 4, 2), elements=finite),
       finite, finite)
def test_global_avg_pool_linear(u, w, alpha, beta):
    lhs = T.global_avg_pool(alpha * u + beta * w)
    rhs = alpha * T.global_avg_pool(u) + beta * T.global_avg_pool(w)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_matvec():
    x = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(T.matvec(np.eye(3), x), x)
    assert np.array_equal(T.matvec(np.zeros((2, 3)), x), [0.0, 0.0])
    assert np.array_equal(T.matvec([[1, 2], [3, 4]], [1, 1]), [3.0, 7.0])
    with pytest.raises(T.ShapeError):
        T.matvec(np.eye(3), np.ones(2))


def test_elementwise():
    assert T.relu(-1.5) == 0.0
    assert T.sigmoid(np.array(0.0)) == 0.5
    assert np.array_equal(T.pointwise_mul([2, 3], [4, 5]), [8.0, 15.0])
    assert np.array_equal(T.scalar_mul([1.0, -2.0], 3.0), [3.0, -6.0])
    with pytest.raises(T.ShapeError):
        T.pointwise_mul([1, 2], [1, 2, 3])


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        y = T.sigmoid(np.array([-1000.0, 1000.0]))
    assert y[0] == 0.0 and y[1] == 1.0


def test_elementary_derivatives():
    assert T.sigmoid_backward(np.array(1.0), T.sigmoid(np.array(0.0))) == 0.25
    assert T.relu_backward(np.array(1.0), np.array(-1.0)) == 0.0


def test_argmax_examples():
    assert T.argmax_spatial(np.array([[7.0]])) == (0, 0)
    u = np.zeros((4, 5))
    u[2, 3] = 1.0
    assert T.argmax_spatial(u) == (2, 3)
    assert T.argmax_spatial(np.ones((3, 3))) == (0, 0)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.integers(-3, 3).map(float)))
def test_argmax_is_maximal_and_first(u):
    a, b = T.argmax_spatial(u)
    assert (u <= u[a, b]).all()
    assert (a, b) == brute_argmax(u)


def test_conv2d_gradient_3x3_input_2x2_kernel():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (1, 3, 3, 1))
    w = rng.uniform(-1, 1, (2, 2, 1, 1))
    g = rng.uniform(-1, 1, (1, 2, 2, 1))
    gx, gw, _ = T.conv2d_backward(g, x, w)
    f = lambda: float((g * T.conv2d(x, w)).sum())
    assert rel_error(gx, numeric_grad(f, x, 1e-3)) <= 1e-4
    assert rel_error(gw, numeric_grad(f, w, 1e-3)) <= 1e-4


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 4, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    b = rng.normal(size=2)
    y = T.conv2d(x, w, b, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(y)
    for n, i, j, o in np.ndindex(y.shape):
        ref[n, i, j, o] = (xp[n, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[..., o]).sum() + b[o]
    assert np.allclose(y, ref, atol=1e-12)


def test_backward_rejects_wrong_upstream_shape():
    x = np.ones((1, 4, 4, 2))
    w = np.ones((3, 3, 2, 3))
    with pytest.raises(T.ShapeError):
        T.conv2d_backward(np.ones((1, 4, 4, 2)), x, w, 1, 1)
    with pytest.raises(T.ShapeError):
        T.global_avg_pool_backward(np.ones(3), (4, 4, 2))
    with pytest.raises(T.ShapeError):
        T.relu_backward(np.ones(3), np.ones(4))
    with pytest.raises(T.ShapeError):
        T.dense_backward(np.ones((2, 2)), np.ones((2, 3)), np.ones((3, 4)))
    with pytest.raises(T.ShapeError):
        T.matvec_backward(np.ones(3), np.ones((2, 2)), np.ones(2))


def test_cross_entropy_matches_definition():
    logits = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
    labels = np.array([1, 2])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -(np.log(p[0, 1]) + np.log(p[1, 2])) / 2
    assert T.softmax_cross_entropy(logits, labels) == pytest.approx(expected, rel=1e-14)


@settings(deadline=None, max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_every_backward_matches_finite_differences(seed):
    for result in check_ops(trials=5, seed=seed):
        assert result.passed, result


def test_determinism():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    assert np.array_equal(T.conv2d(x, w, None, 1, 1), T.conv2d(x.copy(), w.copy(), None, 1, 1))
