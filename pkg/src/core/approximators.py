"""
Constructive approximators.

Barron targets: a ridge sum (1/M) sum_m b_m (a_m . x - t_m)_+ stored as a
block-sparse FNN with B_bs = 1/M, B_fin = 1. Ridges come from a greedy
matching-pursuit fitter.

Hölder targets: on the lattice Gamma(M') of [0,1]^D every point a gets one
block Mult(Q_a, Hat_a), where Hat_a approximates the tensor hat
prod_j (1/M' - |x_j - a_j|)_+ and Q_a approximates P_a f / B + 1/2 for the
truncated Taylor polynomial P_a f at a. Summing B M'^D Mult(Q_a, Hat_a) and
subtracting B/2 reproduces M'^D sum_a H_a P_a f. Every block parameter is
bounded by 1.
"""

import logging
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from src.core.compiler import compile_constant_depth, compile_fnn_to_cnn
from src.core.fnn import (
    BlockSparseFnn,
    FnnBlock,
    chain_blocks,
    identity_layers,
    parallel_blocks,
    rescale_fnn,
)
from src.utils.errors import DomainError
from src.utils.function_library import multi_indices

logger = logging.getLogger(__name__)

MAX_LATTICE_POINTS = 10 ** 6
NORM_TOLERANCE = 1e-12
TIE_TOLERANCE = 1e-12
# Latin-hypercube size for sup-error checks when D >= 3
CONTRACT_SAMPLE_POINTS = 100_000


@dataclass(frozen=True)
class RidgeSpec:
    a: np.ndarray
    b: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if not a.shape[0] == b.shape[0] == t.shape[0]:
            raise DomainError(f"ridge lengths differ: a {a.shape[0]}, b {b.shape[0]}, t {t.shape[0]}")
        if a.shape[0] < 1:
            raise DomainError("a ridge sum needs at least one ridge")
        norms = np.sum(np.abs(a), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
        if bad.size:
            raise DomainError(f"ridge {bad[0]}: ||a||_1 = {norms[bad[0]]!r}, must be 1")
        if np.any(np.abs(b) > 1.0):
            raise DomainError(f"ridge {int(np.argmax(np.abs(b)))}: |b| exceeds 1")
        if np.any(np.abs(t) > 1.0):
            raise DomainError(f"ridge {int(np.argmax(np.abs(t)))}: |t| exceeds 1")
        for name, value in (("a", a), ("b", b), ("t", t)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def M(self):
        return self.a.shape[0]

    @property
    def D(self):
        return self.a.shape[1]


def ridge_sum(r, x):
    """(1/M) sum_m b_m (a_m . x - t_m)_+ evaluated directly."""
    x = np.atleast_2d(x)
    return np.maximum(x @ r.a.T - r.t, 0.0) @ r.b / r.M


def barron_fnn(r):
    M = r.M
    blocks = tuple(FnnBlock(((r.a[m][None, :] / M, np.array([r.t[m] / M])),)) for m in range(M))
    weights = tuple(np.array([r.b[m]]) for m in range(M))
    return BlockSparseFnn(r.D, blocks, weights, 0.0, bound_bs=1.0 / M, bound_fin=1.0)


def barron_cnn(r, K):
    return compile_fnn_to_cnn(barron_fnn(r), K)


def evaluation_grid(D, points, seed=0, low=-1.0, high=1.0, samples=CONTRACT_SAMPLE_POINTS):
    """Uniform tensor grid for D <= 2, Latin-hypercube sample otherwise.

    ``points`` is the per-axis count of the grid; ``samples`` is the sample size for D >= 3.
    """
    if D <= 2:
        axis = np.linspace(low, high, points)
        return np.array(list(product(axis, repeat=D)))
    rng = np.random.default_rng(seed)
    if samples < 1:
        raise DomainError(f"need at least one sample point, got {samples}")
    strata = (np.argsort(rng.random((D, samples)), axis=1).T + rng.random((samples, D))) / samples
    return low + (high - low) * strata


def fit_barron_ridges(f, D, M, candidate_budget, grid, seed=0):
    """Greedy matching pursuit over random admissible ridges, minimizing residual sup-error on ``grid``."""
    if M < 1:
        raise DomainError(f"ridge count must be >= 1, got {M}")
    rng = np.random.default_rng(seed)
    residual = np.asarray(f(grid), dtype=np.float64).copy()
    a_list, b_list, t_list = [], [], []
    for step in range(M):
        a = rng.standard_normal((candidate_budget, D))
        a /= np.sum(np.abs(a), axis=1, keepdims=True)
        t = rng.uniform(-1.0, 1.0, candidate_budget)
        atoms = np.maximum(grid @ a.T - t, 0.0) / M
        energy = np.sum(atoms ** 2, axis=0)
        b = np.divide(residual @ atoms, energy, out=np.zeros(candidate_budget), where=energy > 0)
        b = np.clip(b, -1.0, 1.0)
        updated = residual[:, None] - atoms * b
        errors = np.max(np.abs(updated), axis=0)
        squares = np.sum(updated ** 2, axis=0)
        # ties in sup-error (common when the worst point sits on a cube corner) go to the smaller squared error
        tied = errors <= errors.min() + TIE_TOLERANCE
        best = int(np.argmin(np.where(tied, squares, np.inf)))
        current = np.max(np.abs(residual), initial=0.0)
        improves = errors[best] < current or (errors[best] <= current and squares[best] < residual @ residual)
        coefficient = b[best] if improves else 0.0
        residual -= coefficient * atoms[:, best]
        a_list.append(a[best])
        b_list.append(coefficient)
        t_list.append(t[best])
        logger.debug("ridge %d: b=%.4f, residual sup %.4e", step, coefficient, np.max(np.abs(residual)))
    return RidgeSpec(np.array(a_list), np.array(b_list), np.array(t_list))


# Hölder construction

@dataclass(frozen=True)
class TaylorOracle:
    derivative: Callable[[np.ndarray, tuple], float]
    holder_norm: float
    beta: float

    @property
    def degree(self):
        """Largest |alpha| with |alpha| < beta."""
        return int(math.ceil(self.beta)) - 1

    def pulled_back(self):
        """Oracle of u -> f(2u - 1) on [0, 1]^D."""
        derivative = self.derivative

        def scaled(u, alpha):
            return 2.0 ** sum(alpha) * derivative(2.0 * np.asarray(u, dtype=np.float64) - 1.0, alpha)

        return TaylorOracle(scaled, self.holder_norm, self.beta)

    @classmethod
    def from_function(cls, target, beta, D):
        if target.derivative is None:
            raise DomainError(f"{target.name} has no closed-form derivatives")
        return cls(target.derivative, target.holder_norm(beta, D), beta)


@dataclass(frozen=True)
class HolderBuildParams:
    M: int
    M_prime: int
    m: int
    L_star: int
    B: float
    beta: float
    D: int

    @property
    def blocks(self):
        return (self.M_prime + 1) ** self.D

    def error_budget(self, holder_norm):
        return holder_norm * (2 * 3 ** (self.D + 1) + 2 ** self.beta) * self.M ** (-self.beta / self.D)


def lattice_resolution(M, D):
    """Largest M' with (M' + 1)^D <= M."""
    M_prime = max(int(math.floor(M ** (1.0 / D))) - 1, 0)
    while (M_prime + 2) ** D <= M:
        M_prime += 1
    while M_prime > 0 and (M_prime + 1) ** D > M:
        M_prime -= 1
    return M_prime


def holder_params(o, M, D):
    if M < 2 ** D:
        raise DomainError(f"block budget must be >= 2^D = {2 ** D}, got {M}")
    m = int(math.ceil((2.0 + o.beta / D) * math.log2(M) - 1e-12))
    L_star = (m + 5) * int(math.ceil(math.log2(D)))
    return HolderBuildParams(M, lattice_resolution(M, D), m, L_star, 2.0 * o.holder_norm, o.beta, D)


def lattice(M_prime, D):
    """Gamma(M') = {j / M' : j in {0..M'}^D}, lexicographic."""
    if M_prime < 1:
        raise DomainError(f"lattice resolution must be >= 1, got {M_prime}")
    if (M_prime + 1) ** D > MAX_LATTICE_POINTS:
        raise DomainError(f"lattice with {(M_prime + 1) ** D} points exceeds {MAX_LATTICE_POINTS}")
    return np.array(list(product(range(M_prime + 1), repeat=D)), dtype=np.float64) / M_prime


def hat_exact(a, M_prime, x):
    x = np.atleast_2d(x)
    return np.prod(np.maximum(1.0 / M_prime - np.abs(x - np.asarray(a)), 0.0), axis=1)


def taylor_coefficients(o, a):
    """{alpha: d^alpha f(a) / alpha!} for |alpha| < beta."""
    D = len(a)
    return {
        alpha: o.derivative(np.asarray(a, dtype=np.float64), alpha) / math.prod(math.factorial(k) for k in alpha)
        for order in range(o.degree + 1)
        for alpha in multi_indices(D, order)
    }


def taylor_exact(o, a, x):
    x = np.atleast_2d(x)
    shift = x - np.asarray(a, dtype=np.float64)
    total = np.zeros(x.shape[0])
    for alpha, coefficient in taylor_coefficients(o, a).items():
        total += coefficient * np.prod(shift ** np.array(alpha), axis=1)
    return total


def mult_network(m):
    """ReLU network with |Mult(x, y) - xy| <= 2^-m on [0,1]^2, output clamped to [0, 1].

    xy = g(u1) - g(u2) + u2 - 1/4 with g(u) = u(1 - u), u1 = (x - y + 1)/2,
    u2 = (x + y)/2; each g is the sawtooth series sum_k R^k(u) with
    R^k = T^k o R^(k-1) and T^k(v) = (v/2)_+ - (v - 2^(1-2k))_+.
    Units per hidden layer: [r, a1, b1, a2, b2] with R^k(u_i) = a_i - b_i and
    r the running value u2 + partial sums.
    """
    if m < 1:
        raise DomainError(f"accuracy exponent must be >= 1, got {m}")
    layers = [(
        np.array([
            [0.5, 0.5],
            [0.25, -0.25],
            [0.5, -0.5],
            [0.25, 0.25],
            [0.5, 0.5],
        ]),
        np.array([0.0, -0.25, 0.0, 0.0, 0.5]),
    )]
    carry = np.array([1.0, 1.0, -1.0, -1.0, 1.0])
    for k in range(2, m + 1):
        weight = np.array([
            carry,
            [0.0, 0.5, -0.5, 0.0, 0.0],
            [0.0, 1.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.5, -0.5],
            [0.0, 0.0, 0.0, 1.0, -1.0],
        ])
        threshold = 2.0 ** (1 - 2 * k)
        layers.append((weight, np.array([0.0, 0.0, threshold, 0.0, threshold])))
    layers.append((carry[None, :], np.array([0.25])))
    layers.append((np.array([[1.0], [1.0]]), np.array([0.0, 1.0])))
    layers.append((np.array([[1.0, -1.0]]), np.array([0.0])))
    return FnnBlock(tuple(layers))


def _read_inputs(block, indices, width):
    """Make ``block`` read coordinates ``indices`` of a width-``width`` input."""
    (weight, bias), *rest = block.layers
    widened = np.zeros((weight.shape[0], width))
    for column, index in enumerate(indices):
        widened[:, index] += weight[:, column]
    return FnnBlock(((widened, bias),) + tuple(rest))


def _pass_through(index, width, depth):
    first = np.zeros((1, width))
    first[0, index] = 1.0
    return FnnBlock(((first, np.zeros(1)),) + identity_layers(1, depth - 1))


def product_tree(indices, width, m):
    """Network multiplying the listed [0,1]-valued inputs through a binary tree of Mult networks.

    Returns None for a single factor (no layers needed).
    """
    indices = list(indices)
    if len(indices) == 1:
        return None
    mult = mult_network(m)
    tree = None
    current_width = width
    while len(indices) > 1:
        parts = [
            _read_inputs(mult, indices[i:i + 2], current_width) for i in range(0, len(indices) - 1, 2)
        ]
        if len(indices) % 2:
            parts.append(_pass_through(indices[-1], current_width, mult.depth))
        level = parallel_blocks(parts)
        tree = level if tree is None else chain_blocks(tree, level)
        indices = list(range(len(parts)))
        current_width = len(parts)
    return tree


def hat_network(a, M_prime, m, D):
    """ReLU approximation of H_a on [0,1]^D; parameters bounded by 1.

    The hinge factors (1/M' - |x_j - a_j|)_+ are left in [0, 1/M'] and are not
    rescaled by M' before the Mult tree, so the network approximates H_a itself.
    The M'^D normalization lives in the final-layer weight B * M'^D of
    :func:`holder_fnn`. Depth is 2 + ceil(log2 D) * (m + 3) <= 2 + L*.
    """
    a = np.asarray(a, dtype=np.float64)
    split = np.vstack([np.eye(D), -np.eye(D)])
    factors = np.zeros((D, 2 * D))
    factors[np.arange(D), np.arange(D)] = -1.0
    factors[np.arange(D), D + np.arange(D)] = -1.0
    hinges = FnnBlock((
        (split, np.concatenate([a, -a])),
        (factors, np.full(D, -1.0 / M_prime)),
    ))
    tree = product_tree(range(D), D, m)
    return hinges if tree is None else chain_blocks(hinges, tree)


def _monomial_coefficients(o, a):
    """Coefficients d_gamma of P_a f written in powers of x (not x - a)."""
    a = np.asarray(a, dtype=np.float64)
    coefficients = {}
    for alpha, c in taylor_coefficients(o, a).items():
        for gamma in product(*(range(k + 1) for k in alpha)):
            weight = math.prod(math.comb(k, g) * (-aj) ** (k - g) for k, g, aj in zip(alpha, gamma, a))
            coefficients[gamma] = coefficients.get(gamma, 0.0) + c * weight
    return coefficients


def q_network(o, a, B, m):
    """ReLU approximation of P_a f / B + 1/2 on [0,1]^D (oracle already on [0,1]^D)."""
    D = len(a)
    coefficients = _monomial_coefficients(o, a)
    constant = coefficients.pop((0,) * D, 0.0) / B + 0.5
    if not 0.0 <= constant <= 1.0:
        raise DomainError(f"Taylor constant term {constant!r} at {list(a)} leaves [0, 1]; B={B} is too small")
    monomials = sorted(coefficients)
    scaled = np.array([coefficients[g] / B for g in monomials])
    if scaled.size and np.max(np.abs(scaled)) > 1.0:
        worst = monomials[int(np.argmax(np.abs(scaled)))]
        raise DomainError(f"Taylor coefficient for x^{worst} at {list(a)} exceeds B={B}")
    if not monomials:
        return FnnBlock(((np.zeros((1, D)), np.array([-constant])),))
    if all(sum(g) == 1 for g in monomials):
        row = np.zeros((1, D))
        for g, s in zip(monomials, scaled):
            row[0, g.index(1)] = s
        return FnnBlock(((row, np.array([-constant])),))
    parts = []
    for gamma in monomials:
        factors = [j for j, k in enumerate(gamma) for _ in range(k)]
        tree = product_tree(factors, D, m)
        parts.append(_pass_through(factors[0], D, 1) if tree is None else tree)
    body = parallel_blocks(parts)
    return chain_blocks(body, FnnBlock(((scaled[None, :], np.array([-constant])),)))


def _on_symmetric_cube(block):
    """Prepend u = (x + 1)/2 as the ReLU pair ((x+1)/2)_+, (-(x+1)/2)_+ and read u from their difference."""
    (weight, bias), *rest = block.layers
    D = weight.shape[1]
    pair = (np.vstack([0.5 * np.eye(D), -0.5 * np.eye(D)]), np.concatenate([np.full(D, -0.5), np.full(D, 0.5)]))
    return FnnBlock((pair, (np.hstack([weight, -weight]), bias)) + tuple(rest))


def holder_fnn(o, M, D):
    """Block-sparse FNN approximating f on [-1,1]^D with (M'+1)^D blocks."""
    params = holder_params(o, M, D)
    unit = o.pulled_back()
    mult = mult_network(params.m)
    blocks = []
    for a in lattice(params.M_prime, D):
        q = q_network(unit, a, params.B, params.m)
        hat = hat_network(a, params.M_prime, params.m, D)
        blocks.append(_on_symmetric_cube(chain_blocks(parallel_blocks([q, hat]), mult)))
    weight = params.B * params.M_prime ** D
    logger.info(
        "Built Hölder FNN: M=%d, M'=%d, m=%d, %d blocks of depth %d",
        M, params.M_prime, params.m, len(blocks), blocks[0].depth,
    )
    fnn = BlockSparseFnn(
        input_dim=D,
        blocks=tuple(blocks),
        final_weights=tuple(np.array([weight]) for _ in blocks),
        final_bias=params.B / 2.0,
        bound_bs=1.0,
        bound_fin=params.B * M,
    )
    return fnn, params


def holder_rescaling_factor(fnn, K, M):
    """k = 16 D' K (M^(1/L') ^ 1)^-1 with D' the widest and L' the deepest block."""
    depth = max(fnn.depths)
    return 16.0 * fnn.max_width * K / min(M ** (1.0 / depth), 1.0)


def holder_cnn(o, M, D, K, constant_depth=None):
    fnn, params = holder_fnn(o, M, D)
    k = holder_rescaling_factor(fnn, K, M)
    rescaled = rescale_fnn(fnn, k)
    if constant_depth is None:
        return compile_fnn_to_cnn(rescaled, K)
    return compile_constant_depth(rescaled, constant_depth, K)
