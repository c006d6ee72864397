"""
Clipped empirical risk minimization for ResNet-type CNNs.

Gradients are computed by hand in reverse mode: the forward pass caches every
layer input and pre-activation, the backward pass walks the read-out, the
residual blocks (identity or masked skip) and the conv layers in reverse.
Parameters are kept as a flat list of arrays in the order
[block 0 layer 0 filter, bias, block 0 layer 1 filter, ..., readout W, readout b].
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.core.cnn import ConvLayer, ResidualBlock, ResNetCnn, pad_input, validate_cnn
from src.core.tensor_core import (
    Activation,
    ConvFilter,
    DenseAffine,
    conv_apply_batch,
    conv_filter_grad,
    conv_transpose_batch,
)
from src.utils.errors import DomainError, TrainingError, ValidationError

logger = logging.getLogger(__name__)

PROJECT_EACH_STEP = "step"
PROJECT_AT_END = "end"


@dataclass
class TrainConfig:
    steps: int
    learning_rate: float
    batch_size: int
    bound_conv: float
    bound_fc: float
    clip_level: Optional[float] = None
    seed: int = 0
    projection: str = PROJECT_EACH_STEP
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise DomainError("steps >= 0, batch_size >= 1 and learning_rate > 0 are required")
        if not (self.bound_conv > 0 and self.bound_fc > 0):
            raise DomainError("projection bounds must be positive")
        if self.clip_level is not None and self.clip_level < 0:
            raise DomainError(f"clip level must be nonnegative, got {self.clip_level}")
        if self.projection not in (PROJECT_EACH_STEP, PROJECT_AT_END):
            raise DomainError(f"unknown projection mode {self.projection!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainingResult:
    net: ResNetCnn
    epoch_losses: List[float] = field(default_factory=list)
    steps: int = 0


def cnn_parameters(net):
    params = []
    for block in net.blocks:
        for layer in block.layers:
            params.append(np.array(layer.filter.weights))
            params.append(np.array(layer.bias))
    params.append(np.array(net.readout.weight))
    params.append(np.array(net.readout.bias))
    return params


def with_parameters(net, params):
    blocks, index = [], 0
    for block in net.blocks:
        layers = []
        for layer in block.layers:
            layers.append(ConvLayer(ConvFilter(params[index]), params[index + 1], layer.activation))
            index += 2
        blocks.append(ResidualBlock(tuple(layers)))
    readout = DenseAffine(params[index], params[index + 1])
    return ResNetCnn(net.input_dim, net.trunk_channels, tuple(blocks), readout, net.bound_conv, net.bound_fc,
                     masks=net.masks, padding=net.padding)


def _layout(net):
    """(block index, activation) per conv layer, in parameter order."""
    return [(m, layer.activation) for m, block in enumerate(net.blocks) for layer in block.layers]


def forward(net, params, x):
    """Output and cache for :func:`backward`."""
    state = pad_input(x, net.trunk_channels)
    cache = {"block_inputs": [], "layer_inputs": [], "preacts": []}
    index = 0
    for m, block in enumerate(net.blocks):
        cache["block_inputs"].append(state)
        h = state
        for layer in block.layers:
            cache["layer_inputs"].append(h)
            z = conv_apply_batch(params[index], h, net.padding) - params[index + 1]
            cache["preacts"].append(z)
            h = layer.activation.apply(z)
            index += 2
        skip = state if net.masks is None else state * net.masks[m][None, None, :]
        state = h + skip
    cache["final"] = state
    flat = state.reshape(state.shape[0], -1)
    return flat @ params[-2][0] - params[-1][0], cache


def backward(net, params, cache, grad_output):
    """Gradients of sum(grad_output * output) for every parameter."""
    grads = [np.zeros_like(p) for p in params]
    final = cache["final"]
    N = final.shape[0]
    grads[-2] = (grad_output @ final.reshape(N, -1))[None, :]
    grads[-1] = np.array([-np.sum(grad_output)])
    d_state = (grad_output[:, None] * params[-2][0][None, :]).reshape(final.shape)

    layout = _layout(net)
    layer = len(layout) - 1
    for m in reversed(range(net.M)):
        d_skip = d_state if net.masks is None else d_state * net.masks[m][None, None, :]
        d_h = d_state
        for _ in range(net.blocks[m].depth):
            activation = layout[layer][1]
            d_z = d_h * activation.derivative(cache["preacts"][layer])
            weights = params[2 * layer]
            grads[2 * layer] = conv_filter_grad(d_z, cache["layer_inputs"][layer], weights.shape[0], net.padding)
            grads[2 * layer + 1] = -np.sum(d_z, axis=(0, 1))
            d_h = conv_transpose_batch(weights, d_z, net.padding)
            layer -= 1
        d_state = d_h + d_skip
    return grads


def loss_and_gradients(net, x, y, clip_level=None, params=None):
    """Mean squared loss of the clipped output and its parameter gradients."""
    params = cnn_parameters(net) if params is None else params
    output, cache = forward(net, params, x)
    if clip_level is None:
        prediction, passes = output, np.ones_like(output)
    else:
        prediction = np.clip(output, -clip_level, clip_level)
        passes = (np.abs(output) < clip_level).astype(np.float64)
    residual = prediction - y
    loss = float(np.mean(residual ** 2))
    grad_output = 2.0 * residual * passes / x.shape[0]
    return loss, backward(net, params, cache, grad_output)


def project(net, params, bound_conv, bound_fc):
    limit = len(params) - 2
    return [np.clip(p, -bound_conv, bound_conv) if i < limit else np.clip(p, -bound_fc, bound_fc)
            for i, p in enumerate(params)]


def erm_train(net, data, cfg):
    """Projected minibatch gradient descent on the clipped squared loss."""
    report = validate_cnn(net, bound_conv=cfg.bound_conv, bound_fc=cfg.bound_fc)
    if not report.passed:
        raise ValidationError("initial network is outside the training class: " + "; ".join(report.violations), report)
    if cfg.steps == 0:
        return TrainingResult(net)
    x, y = data.inputs, data.targets
    N = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = cnn_parameters(net)
    moments = [np.zeros_like(p) for p in params]
    squares = [np.zeros_like(p) for p in params]
    steps_per_epoch = max(1, -(-N // cfg.batch_size))
    epoch_losses, running = [], []
    order = rng.permutation(N)
    for step in range(cfg.steps):
        position = step % steps_per_epoch
        if position == 0 and step:
            order = rng.permutation(N)
        batch = order[position * cfg.batch_size:(position + 1) * cfg.batch_size]
        loss, grads = loss_and_gradients(net, x[batch], y[batch], cfg.clip_level, params)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step}")
        if cfg.optimizer == "adam":
            updates = []
            for i, g in enumerate(grads):
                moments[i] = 0.9 * moments[i] + 0.1 * g
                squares[i] = 0.999 * squares[i] + 0.001 * g ** 2
                m_hat = moments[i] / (1 - 0.9 ** (step + 1))
                v_hat = squares[i] / (1 - 0.999 ** (step + 1))
                updates.append(m_hat / (np.sqrt(v_hat) + 1e-8))
        else:
            updates = grads
        params = [p - cfg.learning_rate * u for p, u in zip(params, updates)]
        if cfg.projection == PROJECT_EACH_STEP:
            params = project(net, params, cfg.bound_conv, cfg.bound_fc)
        running.append(loss)
        if position == steps_per_epoch - 1 or step == cfg.steps - 1:
            epoch_losses.append(float(np.mean(running)))
            logger.debug("epoch %d: loss %.6f", len(epoch_losses), epoch_losses[-1])
            running = []
    params = project(net, params, cfg.bound_conv, cfg.bound_fc)
    return TrainingResult(with_parameters(net, params), epoch_losses, cfg.steps)


def random_cnn(arch, rng, masks=None):
    """In-class network with entries uniform in +-B/sqrt(fan-in), clipped to the class bounds.

    The last layer of every block uses the Identity activation.
    """

    def draw(shape, fan_in, bound):
        scale = bound / np.sqrt(max(fan_in, 1))
        return np.clip(rng.uniform(-scale, scale, shape), -bound, bound)

    blocks = []
    for m in range(arch.M):
        previous, layers = arch.C0, []
        for l, (channels, K) in enumerate(zip(arch.channels[m], arch.filters[m])):
            activation = Activation.IDENTITY if l == arch.depths[m] - 1 else Activation.RELU
            weights = draw((K, channels, previous), K * previous, arch.B_conv)
            layers.append(ConvLayer(ConvFilter(weights), draw(channels, K * previous, arch.B_conv), activation))
            previous = channels
        blocks.append(ResidualBlock(tuple(layers)))
    fan_in = arch.D * arch.C0
    readout = DenseAffine(draw((1, fan_in), fan_in, arch.B_fc), draw(1, fan_in, arch.B_fc))
    return ResNetCnn(arch.D, arch.C0, tuple(blocks), readout, arch.B_conv, arch.B_fc, masks=masks)


def min_preactivation(net, x):
    """Smallest |pre-activation| over all ReLU layers; small values flag ReLU kinks."""
    _, cache = forward(net, cnn_parameters(net), x)
    layout = _layout(net)
    values = [np.min(np.abs(z)) for z, (_, act) in zip(cache["preacts"], layout) if act is Activation.RELU]
    return float(min(values, default=np.inf))


def gradient_check(net, x, y, h=1e-5, clip_level=None):
    """Relative deviation ||analytic - central differences|| / ||central differences||."""
    params = cnn_parameters(net)
    _, analytic = loss_and_gradients(net, x, y, clip_level, params)
    numeric = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            original = p[idx]
            p[idx] = original + h
            plus, _ = loss_and_gradients(net, x, y, clip_level, params)
            p[idx] = original - h
            minus, _ = loss_and_gradients(net, x, y, clip_level, params)
            p[idx] = original
            g[idx] = (plus - minus) / (2.0 * h)
        numeric.append(g)
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))
