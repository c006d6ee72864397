"""
Complexity functionals of ResNet-type CNN classes.

For block m with depth L'_m, channels C^(0..L'_m) (C^(0) the trunk) and
filter sizes K^(1..L'_m):

    rho_m   = prod_l C^(l-1) K^(l) B_conv
    rho_m^+ = prod_l (1 v C^(l-1) K^(l) B_conv)
    varrho  = prod_m (1 + rho_m),   varrho^+ = 1 + sum_m L'_m rho_m^+
    Lambda1 = (2M + 3) C0 D (1 v B_fc)(1 v B_conv) varrho varrho^+
    Lambda2 = sum_m sum_l (C^(l-1) C^(l) K^(l) + C^(l)) + C0 D + 1

Lambda1 overflows double precision for deep wide classes, so covering
numbers and bounds are computed from ``log_lambda1``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import List, Optional

import numpy as np

from src.core.cnn import ConvLayer, ResidualBlock, ResNetCnn, cnn_eval_batch
from src.core.tensor_core import ConvFilter, DenseAffine
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

MIN_COVERING_NUMBER = 3


@dataclass
class ArchSummary:
    D: int
    C0: int
    depths: List[int]
    channels: List[List[int]]
    filters: List[List[int]]
    B_conv: float
    B_fc: float
    masked: bool = False
    L: Optional[int] = None

    def __post_init__(self):
        if self.D < 1 or self.C0 < 1:
            raise DomainError(f"D and C0 must be positive, got D={self.D}, C0={self.C0}")
        if not (self.B_conv > 0 and self.B_fc > 0):
            raise DomainError(f"norm bounds must be positive, got B_conv={self.B_conv}, B_fc={self.B_fc}")
        if not len(self.depths) == len(self.channels) == len(self.filters):
            raise DomainError("depths, channels and filters must list the same number of blocks")
        for m, (depth, chans, sizes) in enumerate(zip(self.depths, self.channels, self.filters)):
            if depth < 1 or len(chans) != depth or len(sizes) != depth:
                raise DomainError(f"block {m}: depth {depth} with {len(chans)} channel and {len(sizes)} filter entries")
            if min(chans) < 1 or min(sizes) < 1:
                raise DomainError(f"block {m}: channel counts and filter sizes must be positive")
        if self.masked and self.L is None:
            self.L = max(self.depths, default=1)

    @property
    def M(self):
        return len(self.depths)

    @property
    def B(self):
        return max(self.B_conv, self.B_fc)

    def layer_factors(self, m):
        """C^(l-1) K^(l) B_conv for each layer of block m."""
        previous = [self.C0] + self.channels[m][:-1]
        return [c * K * self.B_conv for c, K in zip(previous, self.filters[m])]

    @classmethod
    def uniform(cls, D, C0, M, depth, channels, K, B_conv, B_fc, masked=False, L=None):
        return cls(D, C0, [depth] * M, [[channels] * (depth - 1) + [C0] for _ in range(M)],
                   [[K] * depth for _ in range(M)], B_conv, B_fc, masked, L)


@dataclass
class ComplexityReport:
    rho: List[float]
    rho_plus: List[float]
    varrho: float
    varrho_plus: float
    lambda1: float
    log_lambda1: float
    lambda2: int
    B: float
    eps: Optional[float] = None
    covering_log: Optional[float] = None
    masked: bool = False


def block_growth(arch, m):
    if not 0 <= m < arch.M:
        raise DomainError(f"block index {m} outside [0, {arch.M})")
    factors = arch.layer_factors(m)
    return math.prod(factors), math.prod(max(1.0, f) for f in factors)


def _log_growth(arch, m):
    factors = np.log(arch.layer_factors(m))
    return float(np.sum(factors)), float(np.sum(np.maximum(factors, 0.0)))


def varrho(arch, upto=None):
    blocks = range(arch.M if upto is None else upto)
    return math.prod(1.0 + block_growth(arch, m)[0] for m in blocks)


def varrho_plus(arch, upto=None):
    blocks = range(arch.M if upto is None else upto)
    return 1.0 + sum(arch.depths[m] * block_growth(arch, m)[1] for m in blocks)


def lambda1(arch):
    return float(
        (2 * arch.M + 3) * arch.C0 * arch.D * max(1.0, arch.B_fc) * max(1.0, arch.B_conv)
        * varrho(arch) * varrho_plus(arch)
    )


def log_lambda1(arch):
    """log Lambda1 without forming the (possibly overflowing) products."""
    log_rho, log_rho_plus = zip(*(_log_growth(arch, m) for m in range(arch.M))) if arch.M else ((), ())
    log_varrho = float(np.sum(np.logaddexp(0.0, np.array(log_rho))))
    plus_terms = [0.0] + [math.log(arch.depths[m]) + log_rho_plus[m] for m in range(arch.M)]
    log_varrho_plus = float(np.logaddexp.reduce(np.array(plus_terms)))
    return (
        math.log(2 * arch.M + 3) + math.log(arch.C0) + math.log(arch.D)
        + math.log(max(1.0, arch.B_fc)) + math.log(max(1.0, arch.B_conv))
        + log_varrho + log_varrho_plus
    )


def lambda2(arch):
    total = arch.C0 * arch.D + 1
    for m in range(arch.M):
        previous = [arch.C0] + arch.channels[m][:-1]
        for c_in, c_out, K in zip(previous, arch.channels[m], arch.filters[m]):
            total += c_in * c_out * K + c_out
    return total


def mask_penalty(arch):
    """C0 * M~ * L * log 2 for masked classes, else 0."""
    if not arch.masked:
        return 0.0
    return arch.C0 * arch.M * arch.L * math.log(2.0)


def covering_log(arch, eps):
    if not eps > 0:
        raise DomainError(f"covering radius must be positive, got {eps}")
    return lambda2(arch) * (math.log(2.0 * arch.B) + log_lambda1(arch) - math.log(eps)) + mask_penalty(arch)


def complexity_report(arch, eps=None):
    growth = [block_growth(arch, m) for m in range(arch.M)]
    return ComplexityReport(
        rho=[g[0] for g in growth],
        rho_plus=[g[1] for g in growth],
        varrho=varrho(arch),
        varrho_plus=varrho_plus(arch),
        lambda1=lambda1(arch),
        log_lambda1=log_lambda1(arch),
        lambda2=lambda2(arch),
        B=arch.B,
        eps=eps,
        covering_log=None if eps is None else covering_log(arch, eps),
        masked=arch.masked,
    )


def trunk_sup_bound(arch, m):
    """Bound on the trunk sup-norm after the first m blocks for inputs in [-1, 1]^D."""
    return max(1.0, arch.B_conv) * varrho(arch, m) * varrho_plus(arch, m)


def noise_ratio(f_inf, sigma):
    """F~ = ||f||_inf / sigma v 1/2."""
    if not sigma > 0:
        raise DomainError(f"noise level must be positive, got {sigma}")
    return max(f_inf / sigma, 0.5)


def estimation_bound(arch, approx_err_sq, N, f_inf, sigma, C0=1.0):
    """C0 (approximation error + F~^2 / N * log covering number at radius 1/N)."""
    if N < 1:
        raise DomainError(f"sample size must be >= 1, got {N}")
    entropy = covering_log(arch, 1.0 / N)
    if entropy < math.log(MIN_COVERING_NUMBER):
        raise DomainError(f"covering number at 1/N is {math.exp(entropy):.3g}, needs >= {MIN_COVERING_NUMBER}")
    return C0 * (approx_err_sq + noise_ratio(f_inf, sigma) ** 2 / N * entropy)


def _as_exact(value):
    return Fraction(value) if isinstance(value, Rational) else value


def rate_balance(gamma1, gamma2, N):
    """Block count M = floor(N^(1/(2 gamma1 + gamma2))) and exponent -2 gamma1 / (2 gamma1 + gamma2).

    Rational inputs give a Fraction exponent.
    """
    if not (gamma1 > 0 and gamma2 > 0):
        raise DomainError(f"rate exponents must be positive, got {gamma1}, {gamma2}")
    if N < 1:
        raise DomainError(f"sample size must be >= 1, got {N}")
    gamma1, gamma2 = _as_exact(gamma1), _as_exact(gamma2)
    denominator = 2 * gamma1 + gamma2
    M = int(math.floor(N ** (1.0 / float(denominator))))
    while (M + 1) ** float(denominator) <= N * (1.0 + 1e-12):
        M += 1
    while M > 1 and M ** float(denominator) > N * (1.0 + 1e-12):
        M -= 1
    return max(M, 1), -2 * gamma1 / denominator


def holder_gammas(beta, D):
    return _as_exact(beta) / D, Fraction(1)


def barron_gammas(D):
    return Fraction(1, 2) + Fraction(1, D), Fraction(1)


def arch_from_cnn(net):
    """Architecture of a concrete network; bounds are the larger of declared and realized norms."""
    return ArchSummary(
        D=net.input_dim,
        C0=net.trunk_channels,
        depths=[block.depth for block in net.blocks],
        channels=[block.channels for block in net.blocks],
        filters=[block.filter_sizes for block in net.blocks],
        B_conv=max(net.bound_conv, net.conv_norm()),
        B_fc=max(net.bound_fc, net.fc_norm()),
        masked=net.masked,
        L=max((block.depth for block in net.blocks), default=1) if net.masked else None,
    )


def parameter_slots(net):
    """Number of stored scalar parameters (weights and biases, zeros included)."""
    slots = net.readout.weight.size + net.readout.bias.size
    for block in net.blocks:
        for layer in block.layers:
            slots += layer.filter.weights.size + layer.bias.size
    return int(slots)


def perturb_cnn(net, eps, rng, bound_conv, bound_fc):
    """Uniform perturbation of every parameter by at most eps, clamped back into the class."""

    def nudge(values, bound):
        return np.clip(values + rng.uniform(-eps, eps, values.shape), -bound, bound)

    blocks = []
    for block in net.blocks:
        layers = tuple(
            ConvLayer(ConvFilter(nudge(layer.filter.weights, bound_conv)), nudge(layer.bias, bound_conv), layer.activation)
            for layer in block.layers
        )
        blocks.append(ResidualBlock(layers))
    readout = DenseAffine(nudge(net.readout.weight, bound_fc), nudge(net.readout.bias, bound_fc))
    return ResNetCnn(net.input_dim, net.trunk_channels, tuple(blocks), readout, bound_conv, bound_fc,
                     masks=net.masks, padding=net.padding)


@dataclass
class LipschitzReport:
    eps: float
    trials: int
    probes: int
    lambda1: float
    bound: float
    max_difference: float
    violations: int
    passed: bool
    differences: List[float] = field(default_factory=list)


def lipschitz_check(net, eps, trials, probes, seed=0, threads=1):
    """Empirically certify sup |CNN_theta - CNN_theta'| <= Lambda1 * eps for in-class perturbations."""
    if eps < 0:
        raise DomainError(f"perturbation size must be nonnegative, got {eps}")
    arch = arch_from_cnn(net)
    lam = lambda1(arch)

    def trial(index):
        rng = np.random.default_rng([seed, index])
        x = rng.uniform(-1.0, 1.0, (probes, net.input_dim))
        other = perturb_cnn(net, eps, rng, arch.B_conv, arch.B_fc)
        return float(np.max(np.abs(cnn_eval_batch(net, x) - cnn_eval_batch(other, x)), initial=0.0))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            differences = list(pool.map(trial, range(trials)))
    else:
        differences = [trial(i) for i in range(trials)]
    bound = lam * eps
    violations = sum(d > bound for d in differences)
    logger.info("Lipschitz check: max difference %.3e against bound %.3e", max(differences, default=0.0), bound)
    return LipschitzReport(
        eps=eps, trials=trials, probes=probes, lambda1=lam, bound=bound,
        max_difference=max(differences, default=0.0), violations=violations, passed=violations == 0,
        differences=differences,
    )
