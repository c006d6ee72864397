"""
Schema-versioned JSON documents for models, architectures and reports.

Every document is ``{"schema_version": 1, "kind": ..., "data": ...}``. Arrays
are stored as ``{"shape": [...], "values": [...]}`` with values in row-major
order; floats are written with repr precision so they load back bit-for-bit.
"""

import json
import logging
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from src.core.approximators import RidgeSpec
from src.core.cnn import ConvLayer, ResidualBlock, ResNetCnn
from src.core.compiler import CompilationCertificate
from src.core.complexity import ArchSummary, ComplexityReport, LipschitzReport
from src.core.fnn import BlockSparseFnn, FnnBlock
from src.core.harness import RateReport
from src.core.tensor_core import ONE_SIDED, Activation, ConvFilter, DenseAffine
from src.utils.errors import RescnnError, SchemaError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

REPORT_KINDS = {
    "compilation_certificate": CompilationCertificate,
    "complexity_report": ComplexityReport,
    "lipschitz_report": LipschitzReport,
    "rate_report": RateReport,
    "arch_summary": ArchSummary,
}


def _encode_array(array):
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "values": [float(v) for v in array.ravel()]}


def _field(node, key, path):
    if not isinstance(node, dict):
        raise SchemaError(f"expected an object, got {type(node).__name__}", path)
    if key not in node:
        raise SchemaError(f"missing key {key!r}", path)
    return node[key]


def _decode_array(node, path, ndim=None):
    shape = _field(node, "shape", path)
    values = _field(node, "values", path)
    try:
        array = np.array(values, dtype=np.float64).reshape([int(s) for s in shape])
    except (TypeError, ValueError) as e:
        raise SchemaError(f"bad array: {e}", path) from None
    if ndim is not None and array.ndim != ndim:
        raise SchemaError(f"expected {ndim} dimensions, got {array.ndim}", path)
    return array


def _list(node, key, path):
    value = _field(node, key, path)
    if not isinstance(value, list):
        raise SchemaError(f"{key} must be a list", path)
    return value


def _number(node, key, path):
    value = _field(node, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{key} must be a number, got {value!r}", path)
    return value


# encoders

def _encode_fnn(f):
    return {
        "input_dim": f.input_dim,
        "blocks": [
            {"layers": [{"weight": _encode_array(w), "bias": _encode_array(b)} for w, b in block.layers]}
            for block in f.blocks
        ],
        "final_weights": [_encode_array(w) for w in f.final_weights],
        "final_bias": f.final_bias,
        "bound_bs": f.bound_bs,
        "bound_fin": f.bound_fin,
    }


def _encode_cnn(net):
    return {
        "input_dim": net.input_dim,
        "trunk_channels": net.trunk_channels,
        "padding": net.padding,
        "blocks": [
            {"layers": [
                {"weight": _encode_array(layer.filter.weights), "bias": _encode_array(layer.bias),
                 "activation": layer.activation.value}
                for layer in block.layers
            ]}
            for block in net.blocks
        ],
        "readout": {"weight": _encode_array(net.readout.weight), "bias": _encode_array(net.readout.bias)},
        "bound_conv": net.bound_conv,
        "bound_fc": net.bound_fc,
        "masks": None if net.masks is None else [_encode_array(z) for z in net.masks],
    }


def _encode_ridges(r):
    return {"a": _encode_array(r.a), "b": _encode_array(r.b), "t": _encode_array(r.t)}


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def to_document(obj):
    if isinstance(obj, BlockSparseFnn):
        kind, data = "block_sparse_fnn", _encode_fnn(obj)
    elif isinstance(obj, ResNetCnn):
        kind, data = "resnet_cnn", _encode_cnn(obj)
    elif isinstance(obj, RidgeSpec):
        kind, data = "ridge_spec", _encode_ridges(obj)
    else:
        for kind, cls in REPORT_KINDS.items():
            if isinstance(obj, cls):
                data = asdict(obj)
                break
        else:
            raise SchemaError(f"cannot serialize {type(obj).__name__}")
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "data": data}


# decoders

def _decode_fnn(data, path):
    blocks = []
    for m, block in enumerate(_list(data, "blocks", path)):
        block_path = f"{path}.blocks[{m}]"
        layers = []
        for l, layer in enumerate(_list(block, "layers", block_path)):
            layer_path = f"{block_path}.layers[{l}]"
            layers.append((
                _decode_array(_field(layer, "weight", layer_path), f"{layer_path}.weight", 2),
                _decode_array(_field(layer, "bias", layer_path), f"{layer_path}.bias", 1),
            ))
        blocks.append(_build(lambda: FnnBlock(tuple(layers)), block_path))
    weights = [
        _decode_array(w, f"{path}.final_weights[{m}]", 1) for m, w in enumerate(_list(data, "final_weights", path))
    ]
    return _build(lambda: BlockSparseFnn(
        int(_number(data, "input_dim", path)), tuple(blocks), tuple(weights), _number(data, "final_bias", path),
        _number(data, "bound_bs", path), _number(data, "bound_fin", path),
    ), path)


def _decode_cnn(data, path):
    blocks = []
    for m, block in enumerate(_list(data, "blocks", path)):
        block_path = f"{path}.blocks[{m}]"
        layers = []
        for l, layer in enumerate(_list(block, "layers", block_path)):
            layer_path = f"{block_path}.layers[{l}]"
            weights = _decode_array(_field(layer, "weight", layer_path), f"{layer_path}.weight", 3)
            bias = _decode_array(_field(layer, "bias", layer_path), f"{layer_path}.bias", 1)
            activation = _field(layer, "activation", layer_path)
            if activation not in {a.value for a in Activation}:
                raise SchemaError(f"unknown activation {activation!r}", f"{layer_path}.activation")
            layers.append(_build(lambda: ConvLayer(ConvFilter(weights), bias, Activation(activation)), layer_path))
        blocks.append(_build(lambda: ResidualBlock(tuple(layers)), block_path))
    readout_node = _field(data, "readout", path)
    readout = _build(lambda: DenseAffine(
        _decode_array(_field(readout_node, "weight", f"{path}.readout"), f"{path}.readout.weight", 2),
        _decode_array(_field(readout_node, "bias", f"{path}.readout"), f"{path}.readout.bias", 1),
    ), f"{path}.readout")
    masks_node = data.get("masks") if isinstance(data, dict) else None
    masks = None
    if masks_node is not None:
        masks = tuple(_decode_array(z, f"{path}.masks[{m}]", 1) for m, z in enumerate(masks_node))
    return _build(lambda: ResNetCnn(
        int(_number(data, "input_dim", path)), int(_number(data, "trunk_channels", path)), tuple(blocks), readout,
        _number(data, "bound_conv", path), _number(data, "bound_fc", path), masks=masks,
        padding=data.get("padding", ONE_SIDED),
    ), path)


def _decode_ridges(data, path):
    return _build(lambda: RidgeSpec(
        _decode_array(_field(data, "a", path), f"{path}.a", 2),
        _decode_array(_field(data, "b", path), f"{path}.b", 1),
        _decode_array(_field(data, "t", path), f"{path}.t", 1),
    ), path)


def _decode_dataclass(cls, data, path):
    if not isinstance(data, dict):
        raise SchemaError("expected an object", path)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise SchemaError(f"unknown keys {unknown}", path)
    return _build(lambda: cls(**data), path)


def _build(factory, path):
    try:
        return factory()
    except SchemaError:
        raise
    except (RescnnError, TypeError, ValueError) as e:
        raise SchemaError(str(e), path) from None


DECODERS = {
    "block_sparse_fnn": _decode_fnn,
    "resnet_cnn": _decode_cnn,
    "ridge_spec": _decode_ridges,
}


def from_document(doc, expected_kind=None):
    version = _field(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {version!r}, expected {SCHEMA_VERSION}", "$.schema_version")
    kind = _field(doc, "kind", "$")
    if expected_kind is not None and kind not in ((expected_kind,) if isinstance(expected_kind, str) else expected_kind):
        raise SchemaError(f"expected a {expected_kind} document, got {kind!r}", "$.kind")
    data = _field(doc, "data", "$")
    if kind in DECODERS:
        return DECODERS[kind](data, "$.data")
    if kind in REPORT_KINDS:
        return _decode_dataclass(REPORT_KINDS[kind], data, "$.data")
    raise SchemaError(f"unknown document kind {kind!r}", "$.kind")


def dumps(obj):
    return json.dumps(to_document(obj), indent=2, default=_plain)


def loads(text, expected_kind=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from None
    return from_document(doc, expected_kind)


def save(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(dumps(obj))
    logger.info("Wrote %s to %s", type(obj).__name__, path)
    return path


def load(path, expected_kind=None):
    with open(path, "r") as f:
        return loads(f.read(), expected_kind)
