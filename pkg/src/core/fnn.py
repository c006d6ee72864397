"""
Block-sparse fully-connected ReLU networks.

A network is M parallel dense ReLU blocks whose outputs are combined by one
linear read-out: f(x) = sum_m w_m . block_m(x) - b. The block algebra at the
bottom of the module (chaining, parallel stacking, identity padding) is what
the approximator builders use to assemble sub-networks.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.utils.errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

DOMAIN_TOLERANCE = 1e-12


def _readonly(array, ndim, name):
    data = np.array(array, dtype=np.float64)
    if data.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got {data.ndim}", axis="ndim")
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{name} contains non-finite entries")
    data.setflags(write=False)
    return data


@dataclass(frozen=True)
class FnnBlock:
    """Dense ReLU stack; ``layers[l] = (W, b)`` computes ReLU(W h - b)."""

    layers: Tuple[Tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ShapeError("a block needs at least one layer", axis="L")
        frozen = []
        for l, (weight, bias) in enumerate(self.layers):
            weight = _readonly(weight, 2, f"layer {l} weight")
            bias = _readonly(np.atleast_1d(bias), 1, f"layer {l} bias")
            if weight.shape[0] != bias.shape[0]:
                raise ShapeError(f"layer {l}: {weight.shape[0]} rows vs {bias.shape[0]} biases", axis="width")
            if frozen and frozen[-1][0].shape[0] != weight.shape[1]:
                raise ShapeError(
                    f"layer {l} expects {weight.shape[1]} inputs, previous layer gives {frozen[-1][0].shape[0]}",
                    axis="width",
                )
            frozen.append((weight, bias))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def depth(self):
        return len(self.layers)

    @property
    def in_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def out_width(self):
        return self.layers[-1][0].shape[0]

    @property
    def widths(self):
        return [weight.shape[0] for weight, _ in self.layers]

    def sup_norm(self):
        return max(
            max(float(np.max(np.abs(w), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
            for w, b in self.layers
        )

    def forward_batch(self, x):
        h = np.asarray(x, dtype=np.float64)
        for weight, bias in self.layers:
            h = np.maximum(h @ weight.T - bias, 0.0)
        return h

    def __call__(self, x):
        return self.forward_batch(np.atleast_2d(x))[0]


@dataclass(frozen=True)
class BlockSparseFnn:
    input_dim: int
    blocks: Tuple[FnnBlock, ...]
    final_weights: Tuple[np.ndarray, ...]
    final_bias: float
    bound_bs: float
    bound_fin: float

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ShapeError("a block-sparse network needs M >= 1 blocks", axis="M")
        if len(self.final_weights) != len(self.blocks):
            raise ShapeError(
                f"{len(self.final_weights)} final weight vectors for {len(self.blocks)} blocks", axis="M"
            )
        weights = []
        for m, (block, w) in enumerate(zip(self.blocks, self.final_weights)):
            if block.in_dim != self.input_dim:
                raise ShapeError(f"block {m} reads {block.in_dim} inputs, network has D={self.input_dim}", axis="D")
            w = _readonly(np.atleast_1d(w), 1, f"final weight {m}")
            if w.shape[0] != block.out_width:
                raise ShapeError(f"final weight {m} has length {w.shape[0]}, block width {block.out_width}", axis="width")
            weights.append(w)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "final_weights", tuple(weights))
        object.__setattr__(self, "final_bias", float(self.final_bias))

    @property
    def M(self):
        return len(self.blocks)

    @property
    def depths(self):
        return [block.depth for block in self.blocks]

    @property
    def max_width(self):
        return max(max(block.widths) for block in self.blocks)

    def block_norm(self):
        return max(block.sup_norm() for block in self.blocks)

    def final_norm(self):
        return max(max(float(np.max(np.abs(w), initial=0.0)) for w in self.final_weights), abs(self.final_bias))


def check_domain(x, strict=True, tolerance=DOMAIN_TOLERANCE):
    """Inputs must lie in [-1, 1]^D; strict mode raises, lenient mode warns."""
    if np.any(np.abs(x) > 1.0 + tolerance):
        message = "input outside [-1, 1]^D"
        if strict:
            raise DomainError(message)
        warnings.warn(message, RuntimeWarning, stacklevel=3)


def fnn_eval_batch(f, x, strict=True):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != f.input_dim:
        raise ShapeError(f"input has {x.shape[1]} coordinates, network expects {f.input_dim}", axis="D")
    check_domain(x, strict)
    total = np.zeros(x.shape[0])
    for block, w in zip(f.blocks, f.final_weights):
        total += block.forward_batch(x) @ w
    return total - f.final_bias


def fnn_eval(f, x, strict=True):
    return float(fnn_eval_batch(f, np.asarray(x, dtype=np.float64)[None, :], strict)[0])


@dataclass
class FnnValidationReport:
    passed: bool
    M: int
    depths: List[int]
    widths: List[List[int]]
    block_norm: float
    final_norm: float
    declared_bs: float
    declared_fin: float
    violations: List[str] = field(default_factory=list)


def validate_fnn(f):
    """Check F^(FNN) membership; bounds are inclusive. Never raises."""
    violations = []
    block_norm = f.block_norm()
    final_norm = f.final_norm()
    if not f.bound_bs > 0:
        violations.append(f"bound_bs: declared bound {f.bound_bs} must be positive")
    if not f.bound_fin > 0:
        violations.append(f"bound_fin: declared bound {f.bound_fin} must be positive")
    if block_norm > f.bound_bs:
        violations.append(f"block_norm: {block_norm!r} exceeds B_bs={f.bound_bs!r}")
    if final_norm > f.bound_fin:
        violations.append(f"final_norm: {final_norm!r} exceeds B_fin={f.bound_fin!r}")
    return FnnValidationReport(
        passed=not violations,
        M=f.M,
        depths=f.depths,
        widths=[block.widths for block in f.blocks],
        block_norm=block_norm,
        final_norm=final_norm,
        declared_bs=f.bound_bs,
        declared_fin=f.bound_fin,
        violations=violations,
    )


def rescale_fnn(f, k):
    """Move parameter mass from the blocks into the read-out using ReLU homogeneity."""
    if not k >= 1:
        raise DomainError(f"rescaling factor must be >= 1, got {k}")
    if k == 1:
        return f
    L = max(f.depths)
    log_k = np.log(k)
    blocks = []
    for block in f.blocks:
        ratio = L / block.depth
        layers = []
        for l, (weight, bias) in enumerate(block.layers, start=1):
            layers.append((weight * np.exp(-ratio * log_k), bias * np.exp(-l * ratio * log_k)))
        blocks.append(FnnBlock(tuple(layers)))
    scale = np.exp(L * log_k)
    return BlockSparseFnn(
        input_dim=f.input_dim,
        blocks=tuple(blocks),
        final_weights=tuple(w * scale for w in f.final_weights),
        final_bias=f.final_bias,
        bound_bs=f.bound_bs / k,
        bound_fin=f.bound_fin * scale,
    )


def random_fnn(rng, D, M, depth_range=(1, 3), width_range=(1, 5), bound_bs=1.0, bound_fin=1.0):
    """Random in-class network with entries uniform in the declared bounds."""
    blocks, weights = [], []
    for _ in range(M):
        depth = int(rng.integers(depth_range[0], depth_range[1] + 1))
        fan_in, layers = D, []
        for _ in range(depth):
            width = int(rng.integers(width_range[0], width_range[1] + 1))
            layers.append(
                (rng.uniform(-bound_bs, bound_bs, (width, fan_in)), rng.uniform(-bound_bs, bound_bs, width))
            )
            fan_in = width
        blocks.append(FnnBlock(tuple(layers)))
        weights.append(rng.uniform(-bound_fin, bound_fin, fan_in))
    return BlockSparseFnn(D, tuple(blocks), tuple(weights), float(rng.uniform(-bound_fin, bound_fin)), bound_bs, bound_fin)


# Block algebra. Blocks built here only ever see nonnegative inputs after their
# first layer, so ReLU(I h) = h and identity layers pass values through.

def identity_layers(width, depth):
    return tuple((np.eye(width), np.zeros(width)) for _ in range(depth))


def pad_depth(block, depth):
    """Append identity layers until the block has ``depth`` layers."""
    if depth < block.depth:
        raise ShapeError(f"cannot pad a depth-{block.depth} block down to {depth}", axis="L")
    if depth == block.depth:
        return block
    return FnnBlock(block.layers + identity_layers(block.out_width, depth - block.depth))


def chain_blocks(first, second):
    """Feed the (nonnegative) outputs of ``first`` into ``second``."""
    if first.out_width != second.in_dim:
        raise ShapeError(f"cannot chain width {first.out_width} into input {second.in_dim}", axis="width")
    return FnnBlock(first.layers + second.layers)


def _block_diag(matrices):
    rows = sum(m.shape[0] for m in matrices)
    cols = sum(m.shape[1] for m in matrices)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in matrices:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def parallel_blocks(blocks):
    """Run blocks side by side on a shared input; outputs are concatenated in order."""
    blocks = list(blocks)
    if len({b.in_dim for b in blocks}) != 1:
        raise ShapeError("parallel blocks must share the input dimension", axis="D")
    depth = max(b.depth for b in blocks)
    blocks = [pad_depth(b, depth) for b in blocks]
    layers = [(np.vstack([b.layers[0][0] for b in blocks]), np.concatenate([b.layers[0][1] for b in blocks]))]
    for l in range(1, depth):
        layers.append(
            (_block_diag([b.layers[l][0] for b in blocks]), np.concatenate([b.layers[l][1] for b in blocks]))
        )
    return FnnBlock(tuple(layers))
