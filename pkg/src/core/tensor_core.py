"""
Dense numeric primitives: signals, stride-one convolution as a linear
operator, convolutional and fully-connected layers, activations.

Signals are D x C grids (spatial index first). Flattening is spatial-major:
entry (beta, i) lands at position ``beta * C + i``; every read-out matrix in
the package uses this order.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.utils.errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

ONE_SIDED = "one_sided"
EQUAL = "equal"
PADDING_MODES = (ONE_SIDED, EQUAL)


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"

    def apply(self, z):
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return z

    def derivative(self, z):
        """Elementwise derivative at pre-activation ``z`` (0 at the ReLU kink)."""
        if self is Activation.RELU:
            return (z > 0.0).astype(np.float64)
        return np.ones_like(z)


def _frozen(array, ndim, name):
    data = np.array(array, dtype=np.float64)
    if data.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got {data.ndim}", axis="ndim")
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{name} contains non-finite entries")
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class Signal:
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, 2, "signal")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError("signal needs D >= 1 and C >= 1", axis="D" if data.shape[0] < 1 else "C")
        object.__setattr__(self, "data", data)

    @property
    def D(self):
        return self.data.shape[0]

    @property
    def C(self):
        return self.data.shape[1]

    @classmethod
    def from_vector(cls, x):
        return cls(np.asarray(x, dtype=np.float64).reshape(-1, 1))

    def vec(self):
        return self.data.reshape(-1)


@dataclass(frozen=True)
class ConvFilter:
    weights: np.ndarray

    def __post_init__(self):
        weights = _frozen(self.weights, 3, "filter")
        if weights.shape[0] < 1:
            raise ShapeError("filter size K must be >= 1", axis="K")
        object.__setattr__(self, "weights", weights)

    @property
    def K(self):
        return self.weights.shape[0]

    @property
    def c_out(self):
        return self.weights.shape[1]

    @property
    def c_in(self):
        return self.weights.shape[2]

    def sup_norm(self):
        return float(np.max(np.abs(self.weights))) if self.weights.size else 0.0

    @classmethod
    def zeros(cls, K, c_out, c_in):
        return cls(np.zeros((K, c_out, c_in)))


@dataclass(frozen=True)
class DenseAffine:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = _frozen(self.weight, 2, "dense weight")
        bias = _frozen(np.atleast_1d(self.bias), 1, "dense bias")
        if weight.shape[0] != bias.shape[0]:
            raise ShapeError(
                f"weight has {weight.shape[0]} rows but bias has {bias.shape[0]} entries", axis="C_out"
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def in_features(self):
        return self.weight.shape[1]

    def sup_norm(self):
        return max(float(np.max(np.abs(self.weight), initial=0.0)), float(np.max(np.abs(self.bias), initial=0.0)))


def check_filter_fits(K, D, padding=ONE_SIDED):
    """Raise unless a size-K filter is admissible on a length-D signal."""
    if padding not in PADDING_MODES:
        raise DomainError(f"unknown padding mode {padding!r}")
    if padding == ONE_SIDED and K > D:
        raise ShapeError(f"filter size {K} exceeds signal length {D}", axis="K")
    if padding == EQUAL and K > D // 2:
        raise ShapeError(f"equal padding requires K <= floor(D/2); got K={K}, D={D}", axis="K")


def _windows(x, K, padding):
    """Stack the K shifted copies of a batch ``x`` (N, D, C) into (N, D, K, C)."""
    D = x.shape[1]
    left = 0 if padding == ONE_SIDED else K // 2
    padded = np.pad(x, ((0, 0), (left, K - 1 - left), (0, 0)))
    return np.stack([padded[:, k:k + D, :] for k in range(K)], axis=2)


def conv_apply_batch(weights, x, padding=ONE_SIDED):
    """Apply the convolution with raw filter array ``weights`` (K, C_out, C_in) to a batch (N, D, C_in)."""
    K, _, c_in = weights.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"signal has {x.shape[2]} channels, filter expects {c_in}", axis="C_in")
    check_filter_fits(K, x.shape[1], padding)
    return np.einsum("ndki,kji->ndj", _windows(x, K, padding), weights)


def conv_transpose_batch(weights, grad_out, padding=ONE_SIDED):
    """Adjoint of :func:`conv_apply_batch`: maps (N, D, C_out) back to (N, D, C_in)."""
    K = weights.shape[0]
    D = grad_out.shape[1]
    left = 0 if padding == ONE_SIDED else K // 2
    per_tap = np.einsum("ndj,kji->ndki", grad_out, weights)
    grad_in = np.zeros((grad_out.shape[0], D, weights.shape[2]))
    for k in range(K):
        shift = k - left
        if shift >= 0:
            grad_in[:, shift:, :] += per_tap[:, :D - shift, k, :]
        else:
            grad_in[:, :D + shift, :] += per_tap[:, -shift:, k, :]
    return grad_in


def conv_filter_grad(grad_out, x, K, padding=ONE_SIDED):
    """Gradient of sum(grad_out * conv(w, x)) with respect to the filter weights."""
    return np.einsum("ndj,ndki->kji", grad_out, _windows(x, K, padding))


def conv_apply(w, x, padding=ONE_SIDED):
    """y[beta, j] = sum_{k, i} w[k, j, i] x[beta + k, i], zeros past the last entry."""
    if x.C != w.c_in:
        raise ShapeError(f"signal has {x.C} channels, filter expects {w.c_in}", axis="C_in")
    return Signal(conv_apply_batch(w.weights, x.data[None], padding)[0])


def conv_layer(w, b, sigma, x, padding=ONE_SIDED):
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape[0] != w.c_out:
        raise ShapeError(f"bias has {b.shape[0]} entries, filter has {w.c_out} outputs", axis="C_out")
    return Signal(Activation(sigma).apply(conv_apply(w, x, padding).data - b[None, :]))


def fc_layer(A, sigma, x):
    """sigma(W vec(x) - b) for a Signal or an already flattened vector."""
    flat = x.vec() if isinstance(x, Signal) else np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.shape[0] != A.in_features:
        raise ShapeError(f"input has {flat.shape[0]} entries, weight expects {A.in_features}", axis="D*C")
    return Activation(sigma).apply(A.weight @ flat - A.bias)


def op_norm_bound(w):
    """C_in * K * max|w|, an upper bound on the sup-norm operator norm of L^w."""
    return w.c_in * w.K * w.sup_norm()


def fc_op_norm_bound(A):
    """||W||_0 * ||W||_inf, the sup-norm Lipschitz constant of an affine layer."""
    return int(np.count_nonzero(A.weight)) * float(np.max(np.abs(A.weight), initial=0.0))


def conv_as_matrix(w, D, padding=ONE_SIDED):
    """Dense (D*C_out) x (D*C_in) matrix of L^w in spatial-major order."""
    check_filter_fits(w.K, D, padding)
    left = 0 if padding == ONE_SIDED else w.K // 2
    matrix = np.zeros((D * w.c_out, D * w.c_in))
    for beta in range(D):
        for k in range(w.K):
            alpha = beta + k - left
            if 0 <= alpha < D:
                matrix[beta * w.c_out:(beta + 1) * w.c_out, alpha * w.c_in:(alpha + 1) * w.c_in] = w.weights[k]
    return matrix
