"""
ResNet-type CNNs with optional channel-wise masked identity connections.

Evaluation: pad x into channel 0 of a D x C0 trunk, then for every block
``state <- block(state) + mask * state``, then a dense identity read-out.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.core.fnn import check_domain
from src.core.tensor_core import (
    ONE_SIDED,
    PADDING_MODES,
    Activation,
    ConvFilter,
    DenseAffine,
    check_filter_fits,
    conv_apply_batch,
)
from src.utils.errors import DomainError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvLayer:
    filter: ConvFilter
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        bias = np.array(np.atleast_1d(self.bias), dtype=np.float64)
        if bias.ndim != 1 or bias.shape[0] != self.filter.c_out:
            raise ShapeError(f"bias has shape {bias.shape}, filter has {self.filter.c_out} outputs", axis="C_out")
        if not np.all(np.isfinite(bias)):
            raise DomainError("bias contains non-finite entries")
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", Activation(self.activation))

    def sup_norm(self):
        return max(self.filter.sup_norm(), float(np.max(np.abs(self.bias), initial=0.0)))

    def forward_batch(self, x, padding=ONE_SIDED):
        return self.activation.apply(conv_apply_batch(self.filter.weights, x, padding) - self.bias)


@dataclass(frozen=True)
class ResidualBlock:
    layers: Tuple[ConvLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a residual block needs at least one layer", axis="L")
        for l in range(1, len(layers)):
            if layers[l].filter.c_in != layers[l - 1].filter.c_out:
                raise ShapeError(
                    f"layer {l} reads {layers[l].filter.c_in} channels, layer {l - 1} writes {layers[l - 1].filter.c_out}",
                    axis="C",
                )
        if layers[0].filter.c_in != layers[-1].filter.c_out:
            raise ShapeError(
                f"block reads {layers[0].filter.c_in} trunk channels but writes {layers[-1].filter.c_out}",
                axis="C0",
            )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def trunk_channels(self):
        return self.layers[0].filter.c_in

    @property
    def channels(self):
        """C^(1), ..., C^(L) (C^(0) is the trunk width)."""
        return [layer.filter.c_out for layer in self.layers]

    @property
    def filter_sizes(self):
        return [layer.filter.K for layer in self.layers]

    def sup_norm(self):
        return max(layer.sup_norm() for layer in self.layers)

    def forward_batch(self, state, padding=ONE_SIDED):
        h = state
        for layer in self.layers:
            h = layer.forward_batch(h, padding)
        return h


@dataclass(frozen=True)
class ResNetCnn:
    input_dim: int
    trunk_channels: int
    blocks: Tuple[ResidualBlock, ...]
    readout: DenseAffine
    bound_conv: float
    bound_fc: float
    masks: Optional[Tuple[np.ndarray, ...]] = None
    padding: str = ONE_SIDED

    def __post_init__(self):
        if self.padding not in PADDING_MODES:
            raise DomainError(f"unknown padding mode {self.padding!r}")
        for m, block in enumerate(self.blocks):
            if block.trunk_channels != self.trunk_channels:
                raise ShapeError(
                    f"block {m} uses {block.trunk_channels} trunk channels, network has {self.trunk_channels}",
                    axis="C0",
                )
            for K in block.filter_sizes:
                check_filter_fits(K, self.input_dim, self.padding)
        if self.readout.in_features != self.input_dim * self.trunk_channels or self.readout.c_out != 1:
            raise ShapeError(
                f"read-out must map {self.input_dim}x{self.trunk_channels} to a scalar, got {self.readout.weight.shape}",
                axis="readout",
            )
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.masks is not None:
            masks = tuple(np.array(z, dtype=np.float64).reshape(-1) for z in self.masks)
            if len(masks) != len(self.blocks):
                raise ShapeError(f"{len(masks)} masks for {len(self.blocks)} blocks", axis="M")
            for m, z in enumerate(masks):
                if z.shape[0] != self.trunk_channels:
                    raise ShapeError(f"mask {m} has {z.shape[0]} entries, trunk has {self.trunk_channels}", axis="mask")
                if not np.all((z == 0.0) | (z == 1.0)):
                    raise DomainError(f"mask {m} has entries outside {{0, 1}}")
                z.setflags(write=False)
            object.__setattr__(self, "masks", masks)

    @property
    def M(self):
        return len(self.blocks)

    @property
    def masked(self):
        return self.masks is not None

    def conv_norm(self):
        return max((block.sup_norm() for block in self.blocks), default=0.0)

    def fc_norm(self):
        return self.readout.sup_norm()


def pad_input(x, channels):
    """P: place x in channel 0 of an all-zero D x C0 trunk."""
    state = np.zeros((x.shape[0], x.shape[1], channels))
    state[:, :, 0] = x
    return state


def cnn_trunk_states(net, x, strict=True):
    """Trunk after P and after each block, as a list of (N, D, C0) arrays."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"input has {x.shape[1]} coordinates, network expects {net.input_dim}", axis="D")
    check_domain(x, strict)
    state = pad_input(x, net.trunk_channels)
    states = [state]
    for m, block in enumerate(net.blocks):
        skip = state if net.masks is None else state * net.masks[m][None, None, :]
        state = block.forward_batch(state, net.padding) + skip
        states.append(state)
    return states


def readout_batch(net, state):
    return state.reshape(state.shape[0], -1) @ net.readout.weight[0] - net.readout.bias[0]


def cnn_eval_batch(net, x, strict=True):
    return readout_batch(net, cnn_trunk_states(net, x, strict)[-1])


def cnn_eval(net, x, strict=True):
    return float(cnn_eval_batch(net, np.asarray(x, dtype=np.float64)[None, :], strict)[0])


def clip_output(y, F):
    """(y v -F) ^ F, elementwise for arrays."""
    if F < 0:
        raise DomainError(f"clip level must be nonnegative, got {F}")
    clipped = np.clip(y, -F, F)
    return float(clipped) if np.ndim(clipped) == 0 else clipped


@dataclass
class CnnValidationReport:
    passed: bool
    depths: List[int]
    channels: List[List[int]]
    filter_sizes: List[List[int]]
    conv_norm: float
    fc_norm: float
    declared_conv: float
    declared_fc: float
    masked: bool
    violations: List[str] = field(default_factory=list)


def validate_cnn(net, expected=None, bound_conv=None, bound_fc=None):
    """Check class membership against the declared (or given) bounds and an optional ArchSummary."""
    bound_conv = net.bound_conv if bound_conv is None else bound_conv
    bound_fc = net.bound_fc if bound_fc is None else bound_fc
    violations = []
    conv_norm, fc_norm = net.conv_norm(), net.fc_norm()
    if conv_norm > bound_conv:
        violations.append(f"conv_norm: {conv_norm!r} exceeds B_conv={bound_conv!r}")
    if fc_norm > bound_fc:
        violations.append(f"fc_norm: {fc_norm!r} exceeds B_fc={bound_fc!r}")
    if expected is not None:
        if net.M != expected.M:
            violations.append(f"M: {net.M} blocks, expected {expected.M}")
        if net.trunk_channels > expected.C0:
            violations.append(f"C0: {net.trunk_channels} trunk channels, expected <= {expected.C0}")
        if bool(net.masked) != bool(expected.masked):
            violations.append(f"masked: network masked={net.masked}, expected {expected.masked}")
        for m, block in enumerate(net.blocks[:expected.M]):
            want_depth = expected.depths[m]
            if block.depth > want_depth:
                violations.append(f"block {m} depth: {block.depth} exceeds {want_depth}")
                continue
            for l, (c, K) in enumerate(zip(block.channels, block.filter_sizes)):
                if c > expected.channels[m][l]:
                    violations.append(f"block {m} layer {l} channels: {c} exceeds {expected.channels[m][l]}")
                if K > expected.filters[m][l]:
                    violations.append(f"block {m} layer {l} filter size: {K} exceeds {expected.filters[m][l]}")
    return CnnValidationReport(
        passed=not violations,
        depths=[block.depth for block in net.blocks],
        channels=[block.channels for block in net.blocks],
        filter_sizes=[block.filter_sizes for block in net.blocks],
        conv_norm=conv_norm,
        fc_norm=fc_norm,
        declared_conv=bound_conv,
        declared_fc=bound_fc,
        masked=net.masked,
        violations=violations,
    )
