"""
FNN -> ResNet-type CNN compilation.

Trunk layout of every compiled network (0-based channel indices):

    0  input copy (never written by any block)
    1  positive accumulator: c * sum_m (w_m)_+ . block_m(x)
    2  negative accumulator: c * sum_m (w_m)_- . block_m(x)

with c = B_bs / B_fin. Block workspace channels live only inside residual
blocks. The read-out is (ch1 - ch2) / c at spatial index 0, minus b.

Block m of the FNN becomes one residual block:

    L0 ReLU layers    doubled ridge stacks, one per first-layer unit, giving
                      ((W1 x - b1)_+, (W1 x - b1)_-) at spatial index 0
    L_m - 1 layers    size-1 filters carrying the remaining dense layers
    1 Identity layer  size-1 filter writing into the accumulators
"""

import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.cnn import ConvLayer, ResidualBlock, ResNetCnn, cnn_eval_batch
from src.core.fnn import fnn_eval_batch, validate_fnn
from src.core.tensor_core import ONE_SIDED, Activation, ConvFilter, DenseAffine
from src.utils.errors import CompilationError, DomainError, ShapeError

logger = logging.getLogger(__name__)

TRUNK_CHANNELS = 3
TRUNK_LAYOUT = {"input": 0, "positive_accumulator": 1, "negative_accumulator": 2}
SCALE_LIMITS = (1e-300, 1e300)


@dataclass(frozen=True)
class ConvStack:
    """Sequence of conv layers without a residual connection."""

    layers: Tuple[ConvLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        for l in range(1, len(layers)):
            if layers[l].filter.c_in != layers[l - 1].filter.c_out:
                raise ShapeError(f"stack layer {l} does not chain onto layer {l - 1}", axis="C")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def channels(self):
        return [self.layers[0].filter.c_in] + [layer.filter.c_out for layer in self.layers]

    @property
    def filter_sizes(self):
        return [layer.filter.K for layer in self.layers]

    def weight_norm(self):
        return max(layer.filter.sup_norm() for layer in self.layers)

    def bias_norm(self):
        return max(float(np.max(np.abs(layer.bias), initial=0.0)) for layer in self.layers)

    def is_linear(self):
        return all(layer.activation is Activation.IDENTITY for layer in self.layers)

    def forward_batch(self, x, padding=ONE_SIDED):
        h = x
        for layer in self.layers:
            h = layer.forward_batch(h, padding)
        return h


@dataclass(frozen=True)
class RidgeConvStack(ConvStack):
    """Linear stack whose output at (spatial 0, channel 0) is a . x - t."""

    a: Optional[np.ndarray] = None
    t: float = 0.0


def ridge_depth(D, K):
    """L0 = ceil((D - 1) / (K - 1))."""
    return max(1, -(-(D - 1) // (K - 1)))


def ridge_conv(a, t, K):
    """Accumulate the inner product in channel 0 while channel 1 shifts x left by K-1 per layer."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    D = a.shape[0]
    if D < 2:
        raise DomainError(f"ridge convolution needs D >= 2, got D={D}")
    if not 2 <= K <= D:
        raise DomainError(f"filter size must satisfy 2 <= K <= D={D}, got K={K}")
    L0 = ridge_depth(D, K)
    if L0 == 1:
        weights = np.zeros((K, 1, 1))
        weights[:, 0, 0] = a
        layers = [ConvLayer(ConvFilter(weights), np.array([t]), Activation.IDENTITY)]
        return RidgeConvStack(tuple(layers), a=a, t=float(t))

    layers = []
    first = np.zeros((K, 2, 1))
    first[:, 0, 0] = a[:K]
    first[K - 1, 1, 0] = 1.0
    layers.append(ConvLayer(ConvFilter(first), np.zeros(2), Activation.IDENTITY))
    for l in range(2, L0 + 1):
        last = l == L0
        weights = np.zeros((K, 1 if last else 2, 2))
        weights[0, 0, 0] = 1.0
        for k in range(1, K):
            index = (l - 1) * (K - 1) + k
            if index < D:
                weights[k, 0, 1] = a[index]
        if not last:
            weights[K - 1, 1, 1] = 1.0
        bias = np.array([t]) if last else np.zeros(2)
        layers.append(ConvLayer(ConvFilter(weights), bias, Activation.IDENTITY))
    return RidgeConvStack(tuple(layers), a=a, t=float(t))


def relu_double(stack):
    """ReLU stack whose output is (linear output)_+ stacked over (linear output)_-."""
    if not stack.is_linear():
        raise DomainError("relu_double needs an Identity-activation stack")
    layers = []
    for l, layer in enumerate(stack.layers):
        w, b = layer.filter.weights, layer.bias
        if l == 0:
            doubled = np.concatenate([w, -w], axis=1)
        else:
            doubled = np.concatenate([np.concatenate([w, -w], axis=2), np.concatenate([-w, w], axis=2)], axis=1)
        layers.append(ConvLayer(ConvFilter(doubled), np.concatenate([b, -b]), Activation.RELU))
    return ConvStack(tuple(layers))


def _block_diagonal(w1, w2):
    K = w1.shape[0]
    out = np.zeros((K, w1.shape[1] + w2.shape[1], w1.shape[2] + w2.shape[2]))
    out[:, :w1.shape[1], :w1.shape[2]] = w1
    out[:, w1.shape[1]:, w1.shape[2]:] = w2
    return out


def parallel_concat(s1, s2, shared_input=False):
    """Run two equal-depth stacks side by side; channels are stacked s1 first.

    With ``shared_input`` both stacks read the same input channels in layer 1.
    """
    if s1.depth != s2.depth:
        raise ShapeError(f"cannot concatenate stacks of depth {s1.depth} and {s2.depth}", axis="L")
    if s1.filter_sizes != s2.filter_sizes:
        raise ShapeError(f"filter sizes differ: {s1.filter_sizes} vs {s2.filter_sizes}", axis="K")
    layers = []
    for l, (x, y) in enumerate(zip(s1.layers, s2.layers)):
        if x.activation is not y.activation:
            raise DomainError(f"layer {l} activations differ")
        if l == 0 and shared_input:
            if x.filter.c_in != y.filter.c_in:
                raise ShapeError("shared-input stacks must read the same channel count", axis="C_in")
            weights = np.concatenate([x.filter.weights, y.filter.weights], axis=1)
        else:
            weights = _block_diagonal(x.filter.weights, y.filter.weights)
        layers.append(ConvLayer(ConvFilter(weights), np.concatenate([x.bias, y.bias]), x.activation))
    return ConvStack(tuple(layers))


def embed_filter(w, K_new, c_out_new=None, c_in_new=None, out_offset=0, in_offset=0):
    """Zero-pad a filter to a larger size and channel counts; L^w is unchanged on the shared channels."""
    c_out_new = w.c_out if c_out_new is None else c_out_new
    c_in_new = w.c_in if c_in_new is None else c_in_new
    if K_new < w.K:
        raise ShapeError(f"cannot shrink filter size {w.K} to {K_new}", axis="K")
    if out_offset + w.c_out > c_out_new:
        raise ShapeError(f"{w.c_out} output channels at offset {out_offset} exceed {c_out_new}", axis="C_out")
    if in_offset + w.c_in > c_in_new:
        raise ShapeError(f"{w.c_in} input channels at offset {in_offset} exceed {c_in_new}", axis="C_in")
    weights = np.zeros((K_new, c_out_new, c_in_new))
    weights[:w.K, out_offset:out_offset + w.c_out, in_offset:in_offset + w.c_in] = w.weights
    return ConvFilter(weights)


def _embed_layer(layer, c_out_new=None, c_in_new=None, out_offset=0, in_offset=0):
    f = embed_filter(layer.filter, layer.filter.K, c_out_new, c_in_new, out_offset, in_offset)
    bias = np.zeros(f.c_out)
    bias[out_offset:out_offset + layer.filter.c_out] = layer.bias
    return ConvLayer(f, bias, layer.activation)


@dataclass
class CompilationCertificate:
    depths: List[int]
    claimed_depths: List[int]
    channels: List[int]
    claimed_channels: int
    filter_sizes: List[int]
    claimed_filter_size: int
    realized_conv: float
    claimed_conv: float
    realized_fc: float
    claimed_fc: float
    ridge_depth: int
    trunk_channels: int
    trunk_layout: Dict[str, int] = field(default_factory=lambda: dict(TRUNK_LAYOUT))
    masked: bool = False
    constant_depth: Optional[int] = None
    segments: List[int] = field(default_factory=list)
    group_width: Optional[int] = None

    def violations(self):
        found = []
        for m, (depth, claim) in enumerate(zip(self.depths, self.claimed_depths)):
            if depth > claim:
                found.append(f"block {m} depth {depth} > {claim}")
        for m, c in enumerate(self.channels):
            if c > self.claimed_channels:
                found.append(f"block {m} channels {c} > {self.claimed_channels}")
        for m, K in enumerate(self.filter_sizes):
            if K > self.claimed_filter_size:
                found.append(f"block {m} filter size {K} > {self.claimed_filter_size}")
        if self.realized_conv > self.claimed_conv:
            found.append(f"B_conv {self.realized_conv!r} > {self.claimed_conv!r}")
        if self.realized_fc > self.claimed_fc:
            found.append(f"B_fc {self.realized_fc!r} > {self.claimed_fc!r}")
        return found

    @property
    def sound(self):
        return not self.violations()


def _compile_block(block, w, K, scale):
    """Residual block realizing scale * ((w)_+ . h, (w)_- . h) in trunk channels 1 and 2."""
    W1, b1 = block.layers[0]
    stacks = [relu_double(ridge_conv(W1[i], b1[i], K)) for i in range(W1.shape[0])]
    ridge = reduce(lambda s, t: parallel_concat(s, t, shared_input=True), stacks)
    layers = list(ridge.layers)
    layers[0] = _embed_layer(layers[0], c_in_new=TRUNK_CHANNELS)

    # (w1+, w1-, w2+, w2-, ...) -> keep the positive halves
    width = 2 * W1.shape[0]
    selector = np.zeros((W1.shape[0], width))
    selector[np.arange(W1.shape[0]), 2 * np.arange(W1.shape[0])] = 1.0
    for weight, bias in block.layers[1:]:
        layers.append(ConvLayer(ConvFilter((weight @ selector)[None]), bias, Activation.RELU))
        selector = np.eye(weight.shape[0])

    accumulate = np.zeros((1, TRUNK_CHANNELS, selector.shape[1]))
    accumulate[0, 1] = scale * np.maximum(w, 0.0) @ selector
    accumulate[0, 2] = scale * np.maximum(-w, 0.0) @ selector
    layers.append(ConvLayer(ConvFilter(accumulate), np.zeros(TRUNK_CHANNELS), Activation.IDENTITY))
    return layers


def _widen(layers, width):
    """Zero-fill every internal layer to ``width`` channels."""
    widened = []
    for l, layer in enumerate(layers):
        c_in = layer.filter.c_in if l == 0 else width
        c_out = layer.filter.c_out if l == len(layers) - 1 else width
        widened.append(_embed_layer(layer, c_out_new=c_out, c_in_new=c_in))
    return widened


def compile_fnn_to_cnn(f, K, uniform_channels=True, padding=ONE_SIDED):
    """Realize a block-sparse FNN exactly as a ResNet-type CNN."""
    D = f.input_dim
    if D < 2:
        raise CompilationError(f"compilation needs D >= 2, got D={D}")
    if not 2 <= K <= D:
        raise CompilationError(f"filter size must satisfy 2 <= K <= D={D}, got K={K}")
    if padding != ONE_SIDED:
        raise CompilationError("compilation is defined for one-sided padding")
    report = validate_fnn(f)
    if not report.passed:
        raise CompilationError("network is outside its declared class: " + "; ".join(report.violations))
    scale = f.bound_bs / f.bound_fin
    if not SCALE_LIMITS[0] <= scale <= SCALE_LIMITS[1]:
        raise CompilationError(
            f"accumulator scale B_bs/B_fin = {scale!r} is outside {SCALE_LIMITS}; exactness would be lost"
        )
    L0 = ridge_depth(D, K)
    logger.info("Compiling FNN with M=%d, D=%d, K=%d (L0=%d)", f.M, D, K, L0)

    compiled = [_compile_block(block, w, K, scale) for block, w in zip(f.blocks, f.final_weights)]
    if uniform_channels:
        inner = [layer.filter.c_out for layers in compiled for layer in layers[:-1]]
        width = max(inner, default=TRUNK_CHANNELS)
        compiled = [_widen(layers, width) for layers in compiled]
    blocks = tuple(ResidualBlock(tuple(layers)) for layers in compiled)
    for m, block in enumerate(blocks):
        logger.debug("block %d: depth %d, channels %s", m, block.depth, block.channels)

    readout = np.zeros((1, D * TRUNK_CHANNELS))
    readout[0, 1] = 1.0 / scale
    readout[0, 2] = -1.0 / scale
    claimed_conv = f.bound_bs if L0 == 1 else max(f.bound_bs, 1.0)
    claimed_fc = f.bound_fin * max(1.0, 1.0 / f.bound_bs)
    net = ResNetCnn(
        input_dim=D,
        trunk_channels=TRUNK_CHANNELS,
        blocks=blocks,
        readout=DenseAffine(readout, np.array([f.final_bias])),
        bound_conv=claimed_conv,
        bound_fc=claimed_fc,
    )
    certificate = CompilationCertificate(
        depths=[block.depth for block in blocks],
        claimed_depths=[L0 + depth for depth in f.depths],
        channels=[max([TRUNK_CHANNELS] + block.channels) for block in blocks],
        claimed_channels=max(TRUNK_CHANNELS, 4 * f.max_width),
        filter_sizes=[max(block.filter_sizes) for block in blocks],
        claimed_filter_size=K,
        realized_conv=net.conv_norm(),
        claimed_conv=claimed_conv,
        realized_fc=net.fc_norm(),
        claimed_fc=claimed_fc,
        ridge_depth=L0,
        trunk_channels=TRUNK_CHANNELS,
    )
    if not certificate.sound:
        raise CompilationError("certificate violated: " + "; ".join(certificate.violations()))
    return net, certificate


def _zero_block(channels):
    return ResidualBlock((ConvLayer(ConvFilter.zeros(1, channels, channels), np.zeros(channels), Activation.IDENTITY),))


def _group_mask(pattern, group_width):
    return np.repeat(np.asarray(pattern, dtype=np.float64), group_width)


def _segment_groups(s, S0):
    """(read group, write group), 1-based, for segment s of S0."""
    if s == 1:
        return 1, 2
    if s == S0:
        return (3 if S0 % 2 else 2), 1
    return (3, 2) if s % 2 else (2, 3)


def divide_block_masked(block, L, group_width=None):
    """Split a deep residual block into masked blocks of depth <= L over three channel groups.

    Feeding [x | 0 | 0] through the returned blocks (with their masks) yields
    [x + block(x) | 0 | 0].
    """
    if L < 1:
        raise DomainError(f"constant block depth must be >= 1, got {L}")
    S0 = -(-block.depth // L)
    if S0 == 1:
        return [block], [np.ones(block.trunk_channels)]
    G = group_width or max([block.trunk_channels] + block.channels)
    if G < max([block.trunk_channels] + block.channels):
        raise ShapeError(f"group width {G} is narrower than the block", axis="C")
    blocks, masks = [], []
    for s in range(1, S0 + 1):
        segment = list(block.layers[(s - 1) * L:s * L])
        read, write = _segment_groups(s, S0)
        segment[0] = _embed_layer(segment[0], c_out_new=segment[0].filter.c_out, c_in_new=3 * G, in_offset=(read - 1) * G)
        last = segment[-1]
        segment[-1] = _embed_layer(last, c_out_new=3 * G, c_in_new=last.filter.c_in, out_offset=(write - 1) * G)
        blocks.append(ResidualBlock(tuple(segment)))
        if s < S0:
            masks.append(np.ones(3 * G))
            blocks.append(_zero_block(3 * G))
            masks.append(_group_mask([1, 1, 0] if s % 2 else [1, 0, 1], G))
        else:
            masks.append(_group_mask([1, 0, 0], G))
    return blocks, masks


def _embed_trunk(block, channels):
    layers = list(block.layers)
    first, last = layers[0], layers[-1]
    if len(layers) == 1:
        layers[0] = _embed_layer(first, c_out_new=channels, c_in_new=channels)
    else:
        layers[0] = _embed_layer(first, c_in_new=channels)
        layers[-1] = _embed_layer(last, c_out_new=channels)
    return ResidualBlock(tuple(layers))


def compile_constant_depth(f, L, K, uniform_channels=True, padding=ONE_SIDED):
    """Compile, then divide every block deeper than L into masked blocks of depth <= L."""
    if L < 1:
        raise DomainError(f"constant block depth must be >= 1, got {L}")
    net, cert = compile_fnn_to_cnn(f, K, uniform_channels, padding)
    cert.masked = True
    cert.constant_depth = L
    if all(block.depth <= L for block in net.blocks):
        cert.segments = [1] * net.M
        masked = ResNetCnn(
            net.input_dim, net.trunk_channels, net.blocks, net.readout, net.bound_conv, net.bound_fc,
            masks=tuple(np.ones(net.trunk_channels) for _ in net.blocks),
        )
        return masked, cert

    G = max(max([block.trunk_channels] + block.channels) for block in net.blocks)
    blocks, masks, segments = [], [], []
    for block in net.blocks:
        if block.depth <= L:
            blocks.append(_embed_trunk(block, 3 * G))
            masks.append(np.ones(3 * G))
            segments.append(1)
            continue
        pieces, piece_masks = divide_block_masked(block, L, G)
        blocks.extend(pieces)
        masks.extend(piece_masks)
        segments.append(len(pieces))

    D, C0 = net.input_dim, net.trunk_channels
    readout = np.zeros((1, D * 3 * G))
    for beta in range(D):
        readout[0, beta * 3 * G:beta * 3 * G + C0] = net.readout.weight[0, beta * C0:(beta + 1) * C0]
    masked = ResNetCnn(
        D, 3 * G, tuple(blocks), DenseAffine(readout, net.readout.bias), net.bound_conv, net.bound_fc,
        masks=tuple(masks),
    )
    logger.info("Divided %d blocks into %d masked blocks of depth <= %d", net.M, masked.M, L)
    cert.segments = segments
    cert.group_width = G
    cert.depths = [block.depth for block in masked.blocks]
    cert.claimed_depths = [L] * masked.M
    cert.channels = [max([3 * G] + block.channels) for block in masked.blocks]
    cert.claimed_channels = 3 * cert.claimed_channels
    cert.filter_sizes = [max(block.filter_sizes) for block in masked.blocks]
    cert.trunk_channels = 3 * G
    cert.realized_conv = masked.conv_norm()
    cert.realized_fc = masked.fc_norm()
    return masked, cert


def stack_output(stack, x):
    """Evaluate a stack on a batch of D-vectors placed in channel 0."""
    x = np.atleast_2d(x)
    state = np.zeros((x.shape[0], x.shape[1], stack.layers[0].filter.c_in))
    state[:, :, 0] = x
    return stack.forward_batch(state)


def ridge_value(stack, x):
    """Output at spatial index 0, channel 0 (where a ridge stack leaves a . x - t)."""
    return stack_output(stack, x)[:, 0, 0]


def check_exactness(f, net, x, rtol=1e-9):
    """Max relative deviation |CNN(x) - FNN(x)| / (1 + |FNN(x)|) over the batch."""
    expected = fnn_eval_batch(f, x)
    got = cnn_eval_batch(net, x)
    deviation = float(np.max(np.abs(got - expected) / (1.0 + np.abs(expected))))
    return deviation, deviation <= rtol

