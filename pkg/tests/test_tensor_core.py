import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from src.core.tensor_core import (
    EQUAL,
    Activation,
    ConvFilter,
    DenseAffine,
    Signal,
    conv_apply,
    conv_apply_batch,
    conv_as_matrix,
    conv_filter_grad,
    conv_layer,
    conv_transpose_batch,
    fc_layer,
    fc_op_norm_bound,
    op_norm_bound,
)
from src.utils.errors import DomainError, ShapeError


def scalar_filter(taps):
    return ConvFilter(np.array(taps, dtype=np.float64).reshape(-1, 1, 1))


def loop_oracle(w, x):
    """Direct evaluation of the order-4 tensor definition."""
    K, c_out, c_in = w.shape
    D = x.shape[0]
    y = np.zeros((D, c_out))
    for beta in range(D):
        for j in range(c_out):
            for alpha in range(D):
                for i in range(c_in):
                    if 0 <= alpha - beta <= K - 1:
                        y[beta, j] += w[alpha - beta, j, i] * x[alpha, i]
    return y


case = st.tuples(
    st.integers(1, 8), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 32 - 1)
).map(lambda t: (t[0], t[1], t[2], min(t[0], 1 + t[3] % t[0]), t[3]))


def random_case(D, c_in, c_out, K, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (K, c_out, c_in)), rng.uniform(-1, 1, (D, c_in)), rng


@pytest.mark.parametrize(
    "taps, x, expected",
    [
        ([1.0, 0.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]),
        ([0.0, 1.0], [1.0, 2.0, 3.0], [2.0, 3.0, 0.0]),
        ([3.0, 5.0], [7.0, 11.0], [3 * 7 + 5 * 11, 3 * 11]),
    ],
)
def test_conv_apply_examples(taps, x, expected):
    y = conv_apply(scalar_filter(taps), Signal.from_vector(x))
    assert_allclose(y.vec(), expected, rtol=0, atol=0)


@pytest.mark.parametrize(
    "taps, b, sigma, x, expected",
    [
        ([1.0, 0.0], [0.0], Activation.IDENTITY, [2.0, 0.5, -1.0], [2.0, 0.5, -1.0]),
        ([1.0, 0.0], [1.0], Activation.RELU, [2.0, 0.5, -1.0], [1.0, 0.0, 0.0]),
        ([0.0, 1.0], [0.0], Activation.RELU, [-1.0, 2.0, -3.0], [2.0, 0.0, 0.0]),
    ],
)
def test_conv_layer_examples(taps, b, sigma, x, expected):
    y = conv_layer(scalar_filter(taps), b, sigma, Signal.from_vector(x))
    assert_allclose(y.vec(), expected)


def test_fc_layer_examples():
    x = Signal(np.array([[1.5, -2.0], [0.25, 4.0]]))
    selector = np.zeros((1, 4))
    selector[0, 0] = 1.0
    assert_allclose(fc_layer(DenseAffine(selector, [0.0]), Activation.IDENTITY, x), [1.5])
    assert_allclose(fc_layer(DenseAffine(np.zeros((1, 4)), [0.7]), Activation.IDENTITY, x), [-0.7])

    rng = np.random.default_rng(3)
    W, b = rng.standard_normal((2, 4)), rng.standard_normal(2)
    expected = np.array([sum(W[r, c] * x.data.reshape(-1)[c] for c in range(4)) - b[r] for r in range(2)])
    assert_allclose(fc_layer(DenseAffine(W, b), Activation.IDENTITY, x), expected, rtol=1e-12)


def test_vec_is_spatial_major():
    x = Signal(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    assert_array_equal(x.vec(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


@pytest.mark.parametrize(
    "weights, expected",
    [
        (np.array([1.0, 0.0]).reshape(2, 1, 1), 2.0),
        (np.zeros((3, 2, 2)), 0.0),
        (np.full((3, 1, 2), 0.5) * np.array([1, -1]).reshape(1, 1, 2), 3.0),
    ],
)
def test_op_norm_bound_examples(weights, expected):
    assert op_norm_bound(ConvFilter(weights)) == pytest.approx(expected)


def test_channel_mismatch_names_axis():
    with pytest.raises(ShapeError) as info:
        conv_apply(ConvFilter(np.ones((2, 1, 2))), Signal.from_vector([1.0, 2.0, 3.0]))
    assert info.value.axis == "C_in"


def test_filter_longer_than_signal_rejected():
    with pytest.raises(ShapeError) as info:
        conv_apply(scalar_filter([1.0, 1.0, 1.0]), Signal.from_vector([1.0, 2.0]))
    assert info.value.axis == "K"


def test_equal_padding_restricts_filter_size():
    with pytest.raises(ShapeError):
        conv_apply(scalar_filter([1.0, 1.0, 1.0]), Signal.from_vector(np.ones(5)), padding=EQUAL)
    conv_apply(scalar_filter([1.0, 1.0]), Signal.from_vector(np.ones(5)), padding=EQUAL)


def test_equal_padding_centres_even_filters():
    x = Signal.from_vector([1.0, 2.0, 3.0, 4.0])
    assert_array_equal(conv_apply(scalar_filter([0.0, 1.0]), x).vec(), [2.0, 3.0, 4.0, 0.0])
    assert_array_equal(conv_apply(scalar_filter([0.0, 1.0]), x, EQUAL).vec(), [1.0, 2.0, 3.0, 4.0])
    assert_array_equal(conv_apply(scalar_filter([1.0, 0.0]), x, EQUAL).vec(), [0.0, 1.0, 2.0, 3.0])


@pytest.mark.parametrize("K", [1, 2, 3, 4])
def test_equal_padding_reads_centred_window(K):
    D = 8
    rng = np.random.default_rng(K)
    taps = rng.uniform(-1, 1, K)
    x = rng.uniform(-1, 1, D)
    expected = np.zeros(D)
    for beta in range(D):
        for k in range(K):
            alpha = beta - K // 2 + k
            if 0 <= alpha < D:
                expected[beta] += taps[k] * x[alpha]
    f = scalar_filter(taps)
    assert_allclose(conv_apply(f, Signal.from_vector(x), EQUAL).vec(), expected, rtol=1e-12, atol=1e-12)
    assert_allclose(conv_as_matrix(f, D, EQUAL) @ x, expected, rtol=1e-12, atol=1e-12)


def test_non_finite_signal_rejected():
    with pytest.raises(DomainError):
        Signal(np.array([[np.nan]]))


@settings(max_examples=200, deadline=None)
@given(case)
def test_conv_matches_loop_oracle(params):
    D, c_in, c_out, K, seed = params
    w, x, _ = random_case(D, c_in, c_out, K, seed)
    assert_allclose(conv_apply(ConvFilter(w), Signal(x)).data, loop_oracle(w, x), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(case)
def test_conv_is_linear(params):
    D, c_in, c_out, K, seed = params
    w, x, rng = random_case(D, c_in, c_out, K, seed)
    y = rng.uniform(-1, 1, x.shape)
    a, b = rng.uniform(-3, 3, 2)
    f = ConvFilter(w)
    lhs = conv_apply(f, Signal(a * x + b * y)).data
    rhs = a * conv_apply(f, Signal(x)).data + b * conv_apply(f, Signal(y)).data
    assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(case)
def test_conv_as_matrix_agrees(params):
    D, c_in, c_out, K, seed = params
    w, x, _ = random_case(D, c_in, c_out, K, seed)
    f = ConvFilter(w)
    assert_allclose(conv_as_matrix(f, D) @ x.reshape(-1), conv_apply(f, Signal(x)).vec(), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 10), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_equal_padding_matrix_agrees(D, c_in, c_out, seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, D // 2 + 1))
    f = ConvFilter(rng.uniform(-1, 1, (K, c_out, c_in)))
    x = rng.uniform(-1, 1, (D, c_in))
    assert_allclose(
        conv_as_matrix(f, D, EQUAL) @ x.reshape(-1), conv_apply(f, Signal(x), EQUAL).vec(), rtol=1e-12, atol=1e-12
    )


@settings(max_examples=100, deadline=None)
@given(case, st.sampled_from(["one_sided", "equal"]))
def test_transpose_is_adjoint(params, padding):
    D, c_in, c_out, K, seed = params
    if padding == EQUAL:
        if D < 2:
            return
        K = min(K, D // 2)
    w, x, rng = random_case(D, c_in, c_out, K, seed)
    g = rng.uniform(-1, 1, (1, D, c_out))
    forward = np.sum(conv_apply_batch(w, x[None], padding) * g)
    backward = np.sum(x[None] * conv_transpose_batch(w, g, padding))
    assert forward == pytest.approx(backward, rel=1e-10, abs=1e-12)


def test_filter_grad_matches_finite_difference():
    rng = np.random.default_rng(11)
    w = rng.uniform(-1, 1, (3, 2, 2))
    x = rng.uniform(-1, 1, (4, 5, 2))
    g = rng.uniform(-1, 1, (4, 5, 2))
    grad = conv_filter_grad(g, x, 3)
    h = 1e-6
    for idx in [(0, 0, 0), (2, 1, 0), (1, 0, 1)]:
        bumped = w.copy()
        bumped[idx] += h
        numeric = (np.sum(conv_apply_batch(bumped, x) * g) - np.sum(conv_apply_batch(w, x) * g)) / h
        assert grad[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


@settings(max_examples=300, deadline=None)
@given(case, st.sampled_from(list(Activation)))
def test_layer_norm_bounds(params, sigma):
    D, c_in, c_out, K, seed = params
    w, x, rng = random_case(D, c_in, c_out, K, seed)
    f = ConvFilter(w)
    b = rng.uniform(-1, 1, c_out)
    x2 = rng.uniform(-1, 1, x.shape)
    w2 = ConvFilter(w + rng.uniform(-0.1, 0.1, w.shape))
    b2 = b + rng.uniform(-0.1, 0.1, c_out)
    slack = 1e-12
    norm = op_norm_bound(f)

    assert np.max(np.abs(conv_apply(f, Signal(x)).data)) <= norm * np.max(np.abs(x)) + slack
    y = conv_layer(f, b, sigma, Signal(x)).data
    assert np.max(np.abs(y)) <= norm * np.max(np.abs(x)) + np.max(np.abs(b)) + slack
    y2 = conv_layer(f, b, sigma, Signal(x2)).data
    assert np.max(np.abs(y - y2)) <= norm * np.max(np.abs(x - x2)) + slack
    y3 = conv_layer(w2, b2, sigma, Signal(x)).data
    difference = ConvFilter(w - w2.weights)
    assert np.max(np.abs(y - y3)) <= op_norm_bound(difference) * np.max(np.abs(x)) + np.max(np.abs(b - b2)) + slack


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_fc_layer_lipschitz(D, C, c_out, seed):
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1, 1, (c_out, D * C)) * (rng.random((c_out, D * C)) < 0.6)
    A = DenseAffine(W, rng.uniform(-1, 1, c_out))
    x, x2 = rng.uniform(-1, 1, (2, D, C))
    y = fc_layer(A, Activation.RELU, Signal(x))
    y2 = fc_layer(A, Activation.RELU, Signal(x2))
    assert np.max(np.abs(y - y2)) <= fc_op_norm_bound(A) * np.max(np.abs(x - x2)) + 1e-12


def test_unit_signals_stay_within_bound():
    rng = np.random.default_rng(5)
    f = ConvFilter(rng.uniform(-2, 2, (3, 2, 3)))
    bound = op_norm_bound(f)
    x = rng.uniform(-1, 1, (1000, 6, 3))
    x /= np.max(np.abs(x), axis=(1, 2), keepdims=True)
    assert np.max(np.abs(conv_apply_batch(f.weights, x))) <= bound
