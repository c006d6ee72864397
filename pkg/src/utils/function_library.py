"""Named regression targets with closed-form derivatives and Hölder-norm bounds."""

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional

import numpy as np

from src.utils.errors import DomainError


def multi_indices(D, order):
    """All alpha in N^D with |alpha| == order, lexicographic."""
    return [alpha for alpha in product(range(order + 1), repeat=D) if sum(alpha) == order]


@dataclass(frozen=True)
class TargetFunction:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray, tuple], float]]
    # upper bound on max_{|alpha| = k} sup |d^alpha f| over [-1, 1]^D
    derivative_sup: Optional[Callable[[int, int], float]]
    sup_norm: Callable[[int], float]
    barron: bool = False

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    def holder_norm(self, beta, D):
        """Upper bound on ||f||_beta over [-1, 1]^D.

        Sup terms for |alpha| < floor(beta); the top derivatives contribute the
        interpolated bound (D S_{k+1})^s (2 S_k)^(1-s) with s = beta - floor(beta).
        """
        if self.derivative_sup is None:
            raise DomainError(f"{self.name} has no derivative information")
        top = int(math.floor(beta))
        s = beta - top
        total = sum(len(multi_indices(D, k)) * self.derivative_sup(k, D) for k in range(top))
        oscillation = 2.0 * self.derivative_sup(top, D)
        if s > 0:
            lipschitz = D * self.derivative_sup(top + 1, D)
            quotient = lipschitz ** s * oscillation ** (1.0 - s)
        else:
            quotient = oscillation
        return total + len(multi_indices(D, top)) * quotient


def _sin_shift(u, order):
    return np.sin(u + order * np.pi / 2.0)


def _sin_product_value(x):
    return np.prod(np.sin(np.pi * x), axis=1)


def _sin_product_derivative(a, alpha):
    a = np.asarray(a, dtype=np.float64)
    return float(np.prod([np.pi ** k * _sin_shift(np.pi * aj, k) for aj, k in zip(a, alpha)]))


def _sin_first_value(x):
    return np.sin(np.pi * x[:, 0])


def _sin_first_derivative(a, alpha):
    if any(alpha[1:]):
        return 0.0
    return float(np.pi ** alpha[0] * _sin_shift(np.pi * a[0], alpha[0]))


def _first_coordinate_derivative(a, alpha):
    order = sum(alpha)
    if order == 0:
        return float(a[0])
    if order == 1 and alpha[0] == 1:
        return 1.0
    return 0.0


def _constant(c):
    def derivative(a, alpha):
        return float(c) if sum(alpha) == 0 else 0.0

    return TargetFunction(
        name="constant" if c else "zero",
        value=lambda x: np.full(x.shape[0], float(c)),
        derivative=derivative,
        derivative_sup=lambda k, D: abs(c) if k == 0 else 0.0,
        sup_norm=lambda D: abs(c),
        barron=c == 0,
    )


LIBRARY = {
    "sin_product": TargetFunction(
        name="sin_product",
        value=_sin_product_value,
        derivative=_sin_product_derivative,
        derivative_sup=lambda k, D: np.pi ** k,
        sup_norm=lambda D: 1.0,
    ),
    "sin_first": TargetFunction(
        name="sin_first",
        value=_sin_first_value,
        derivative=_sin_first_derivative,
        derivative_sup=lambda k, D: np.pi ** k,
        sup_norm=lambda D: 1.0,
    ),
    "first_coordinate": TargetFunction(
        name="first_coordinate",
        value=lambda x: x[:, 0].copy(),
        derivative=_first_coordinate_derivative,
        derivative_sup=lambda k, D: 1.0 if k <= 1 else 0.0,
        sup_norm=lambda D: 1.0,
    ),
    "constant": _constant(0.5),
    "zero": _constant(0.0),
    "gaussian_bump": TargetFunction(
        name="gaussian_bump",
        value=lambda x: np.exp(-np.sum(x ** 2, axis=1)) - 1.0,
        derivative=None,
        derivative_sup=None,
        sup_norm=lambda D: 1.0 - math.exp(-D),
        barron=True,
    ),
    "cosine_ridge": TargetFunction(
        name="cosine_ridge",
        value=lambda x: np.cos(2.0 * np.mean(x, axis=1)) - 1.0,
        derivative=None,
        derivative_sup=None,
        sup_norm=lambda D: 1.0 - math.cos(2.0),
        barron=True,
    ),
}


def get_function(name):
    try:
        return LIBRARY[name]
    except KeyError:
        raise DomainError(f"unknown test function {name!r}; choose from {sorted(LIBRARY)}") from None
