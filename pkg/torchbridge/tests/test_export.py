import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from torchbridge.containers import (
    conv_from_engine,
    conv_to_engine,
    linear_from_engine,
    linear_to_engine,
    read_container,
    write_container,
    write_graph,
)
from torchbridge.export import UnsupportedModel, export_model, load_engine_weights
from torchbridge.models import TinyRecurrent, TinyResidual

EXPECTED_GRAPH = {
    "nodes": [
        {"id": "input", "kind": "input"},
        {"id": "stem", "kind": "conv", "weight_shape": [3, 3, 1, 8]},
        {"id": "bn_stem", "kind": "other-passthrough"},
        {"id": "relu_1", "kind": "other-passthrough"},
        {"id": "body1", "kind": "conv", "weight_shape": [3, 3, 8, 8]},
        {"id": "bn1", "kind": "other-passthrough"},
        {"id": "relu_2", "kind": "other-passthrough"},
        {"id": "body2", "kind": "conv", "weight_shape": [3, 3, 8, 8]},
        {"id": "bn2", "kind": "other-passthrough"},
        {"id": "add_1", "kind": "add"},
        {"id": "relu_3", "kind": "other-passthrough"},
        {"id": "pool_1", "kind": "pool"},
        {"id": "head", "kind": "fc", "weight_shape": [1, 1, 8, 2]},
        {"id": "output", "kind": "output"},
    ],
    "edges": [
        ["input", "stem"],
        ["stem", "bn_stem"],
        ["bn_stem", "relu_1"],
        ["relu_1", "body1"],
        ["body1", "bn1"],
        ["bn1", "relu_2"],
        ["relu_2", "body2"],
        ["body2", "bn2"],
        ["bn2", "add_1"],
        ["relu_1", "add_1"],
        ["add_1", "relu_3"],
        ["relu_3", "pool_1"],
        ["pool_1", "head"],
        ["head", "output"],
    ],
}


def test_export_matches_hand_fixture():
    torch.manual_seed(0)
    exported = export_model(TinyResidual(), torch.zeros(2, 1, 8, 8))
    assert exported.graph == EXPECTED_GRAPH


def test_exported_graph_passes_engine_validation(tmp_path):
    torch.manual_seed(0)
    exported = export_model(TinyResidual(), torch.zeros(2, 1, 8, 8))
    write_graph(exported.graph, tmp_path / "graph.json")
    proc = subprocess.run(
        [sys.executable, "-m", "chansearch.cli", "extract-deps",
         str(tmp_path / "graph.json"), "--out", str(tmp_path / "deps.json")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    deps = json.loads((tmp_path / "deps.json").read_text())
    # the residual add couples stem.out, body1.in, body2.out and head.in
    merged = next(g for g in deps["groups"] if "stem.out" in g)
    assert set(merged) == {"stem.out", "body1.in", "body2.out", "head.in"}


def test_weights_roundtrip_bitexact(tmp_path):
    torch.manual_seed(1)
    model = TinyResidual()
    exported = export_model(model, torch.zeros(1, 1, 8, 8))
    write_container(exported.weights, tmp_path / "w")
    loaded = read_container(tmp_path / "w")

    rebuilt = TinyResidual()
    load_engine_weights(rebuilt, loaded, exported.meta["layers"])
    for name in ("stem", "body1", "body2", "head"):
        original = getattr(model, name).weight.detach().numpy()
        restored = getattr(rebuilt, name).weight.detach().numpy()
        assert original.astype("float32").tobytes() == restored.tobytes()

    # export -> import -> export is byte stable
    second = export_model(rebuilt, torch.zeros(1, 1, 8, 8))
    for lid, arr in exported.weights.items():
        assert arr.tobytes() == second.weights[lid].tobytes()


def test_axis_permutations_are_inverses():
    rng = np.random.default_rng(0)
    conv = rng.standard_normal((6, 3, 3, 3)).astype("float32")
    assert np.array_equal(conv_from_engine(conv_to_engine(conv)), conv)
    eng = rng.standard_normal((3, 3, 4, 6)).astype("float32")
    assert np.array_equal(conv_to_engine(conv_from_engine(eng)), eng)
    lin = rng.standard_normal((5, 7)).astype("float32")
    assert np.array_equal(linear_from_engine(linear_to_engine(lin)), lin)


def test_recurrent_model_rejected():
    with pytest.raises(UnsupportedModel):
        export_model(TinyRecurrent(), torch.zeros(2, 1, 8, 8))


def test_grouped_conv_rejected():
    model = torch.nn.Sequential(
        torch.nn.Conv2d(4, 4, 3, padding="same", groups=2, bias=False),
    )
    with pytest.raises(UnsupportedModel, match="grouped"):
        export_model(model, torch.zeros(1, 4, 8, 8))


def test_shared_weight_rejected():
    conv = torch.nn.Conv2d(4, 4, 3, padding="same", bias=False)

    class Shared(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.conv = conv

        def forward(self, x):
            return self.conv(self.conv(x))

    with pytest.raises(UnsupportedModel, match="one layer per weight"):
        export_model(Shared(), torch.zeros(1, 4, 8, 8))
