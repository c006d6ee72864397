import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.core.approximators import RidgeSpec
from src.core.cnn import cnn_eval_batch
from src.core.compiler import compile_constant_depth, compile_fnn_to_cnn
from src.core.complexity import ArchSummary, arch_from_cnn, complexity_report, covering_log, lipschitz_check
from src.core.fnn import fnn_eval_batch, random_fnn
from src.core.harness import RateReport
from src.utils import serialization
from src.utils.errors import SchemaError

ARCH_DIR = Path(__file__).resolve().parents[1] / "data" / "arch"


def test_fnn_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    f = random_fnn(rng, 4, 3, bound_bs=0.7, bound_fin=1.3)
    path = serialization.save(f, tmp_path / "models" / "fnn.json")
    g = serialization.load(path, "block_sparse_fnn")
    for (W1, b1), (W2, b2) in zip(
        (layer for block in f.blocks for layer in block.layers),
        (layer for block in g.blocks for layer in block.layers),
    ):
        assert_array_equal(W1, W2)
        assert_array_equal(b1, b2)
    assert (g.final_bias, g.bound_bs, g.bound_fin) == (f.final_bias, f.bound_bs, f.bound_fin)
    x = rng.uniform(-1, 1, (20, 4))
    assert_array_equal(fnn_eval_batch(g, x), fnn_eval_batch(f, x))


def test_masked_cnn_round_trip():
    rng = np.random.default_rng(1)
    f = random_fnn(rng, 3, 2)
    net, _ = compile_constant_depth(f, 1, 2)
    loaded = serialization.loads(serialization.dumps(net), "resnet_cnn")
    assert loaded.masked and len(loaded.masks) == net.M
    for a, b in zip(loaded.masks, net.masks):
        assert_array_equal(a, b)
    x = rng.uniform(-1, 1, (20, 3))
    assert_array_equal(cnn_eval_batch(loaded, x), cnn_eval_batch(net, x))


def test_report_round_trips():
    f = random_fnn(np.random.default_rng(2), 3, 2)
    net, cert = compile_fnn_to_cnn(f, 2)
    arch = arch_from_cnn(net)
    report = RateReport("barron", "M", -1.0, rows=[{"sweep_var": 2, "seed": 0, "error": 0.5, "runtime_s": 0.1}],
                        checks={"compiled_matches_fnn": True}, parameters={"D": 2})
    for obj in (cert, arch, complexity_report(arch, 0.1), report,
                lipschitz_check(net, 1e-3, trials=2, probes=5)):
        assert serialization.loads(serialization.dumps(obj)) == obj


def test_ridge_spec_round_trip():
    r = RidgeSpec([[0.25, -0.75], [1.0, 0.0]], [0.5, -1.0], [0.1, -0.2])
    loaded = serialization.loads(serialization.dumps(r), "ridge_spec")
    assert_array_equal(loaded.a, r.a)
    assert_array_equal(loaded.t, r.t)


def test_shipped_architectures_load():
    arch = serialization.load(ARCH_DIR / "holder_d2_m16.json", "arch_summary")
    assert isinstance(arch, ArchSummary) and arch.M == 16
    masked = serialization.load(ARCH_DIR / "masked_small.json", "arch_summary")
    assert masked.masked and masked.L == 2
    assert covering_log(masked, 0.01) > covering_log(
        ArchSummary(masked.D, masked.C0, masked.depths, masked.channels, masked.filters, masked.B_conv,
                    masked.B_fc), 0.01)


def test_wrong_version_rejected():
    doc = serialization.to_document(ArchSummary(2, 1, [1], [[1]], [[1]], 1.0, 1.0))
    doc["schema_version"] = 2
    with pytest.raises(SchemaError) as info:
        serialization.from_document(doc)
    assert info.value.path == "$.schema_version"


def test_wrong_kind_rejected():
    text = serialization.dumps(ArchSummary(2, 1, [1], [[1]], [[1]], 1.0, 1.0))
    with pytest.raises(SchemaError) as info:
        serialization.loads(text, "resnet_cnn")
    assert info.value.path == "$.kind"


def test_bad_array_is_located():
    doc = serialization.to_document(random_fnn(np.random.default_rng(3), 3, 2))
    del doc["data"]["blocks"][0]["layers"][0]["weight"]["shape"]
    with pytest.raises(SchemaError) as info:
        serialization.from_document(doc)
    assert info.value.path == "$.data.blocks[0].layers[0].weight"


def test_inconsistent_model_is_located():
    doc = json.loads(serialization.dumps(random_fnn(np.random.default_rng(4), 3, 2)))
    doc["data"]["final_weights"][1] = {"shape": [9], "values": [0.0] * 9}
    with pytest.raises(SchemaError) as info:
        serialization.from_document(doc)
    assert info.value.path == "$.data"


def test_unknown_report_keys_rejected():
    doc = serialization.to_document(ArchSummary(2, 1, [1], [[1]], [[1]], 1.0, 1.0))
    doc["data"]["colour"] = "blue"
    with pytest.raises(SchemaError):
        serialization.from_document(doc)


def test_invalid_json_rejected():
    with pytest.raises(SchemaError):
        serialization.loads("{not json")
