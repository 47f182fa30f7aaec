"""Shipped graph fixtures.

Three desk-scale architectures exercise every dependency pattern:

* fig3_mini: one residual skip (conv-conv-add) — the minimal merge case.
* resnet34: the standard 3x3-stem CIFAR variant, 36 convs + 1 fc, with
  identity skips inside stages and 1x1 downsample convs between them.
* darts7: seven cells whose outputs are channel concatenations (derived
  groups), with intra-cell residual adds, two pooling steps, and a 2-class
  1-channel head so the toy trainer can drive it end to end.

The JSON files under data/ are generated by `write_all` and committed; the
builders here stay the single source of truth.
"""

import json
from importlib import resources
from pathlib import Path

from .graph import graph_from_dict


def build_fig3_mini():
    nodes = [
        {"id": "input", "kind": "input"},
        {"id": "conv1", "kind": "conv", "weight_shape": [3, 3, 3, 16]},
        {"id": "conv2", "kind": "conv", "weight_shape": [3, 3, 16, 16]},
        {"id": "add1", "kind": "add"},
        {"id": "conv3", "kind": "conv", "weight_shape": [3, 3, 16, 8]},
        {"id": "output", "kind": "output"},
    ]
    edges = [
        ["input", "conv1"],
        ["conv1", "conv2"],
        ["conv2", "add1"],
        ["conv1", "add1"],
        ["add1", "conv3"],
        ["conv3", "output"],
    ]
    return {"nodes": nodes, "edges": edges}


def build_resnet34(num_classes=10):
    nodes = [
        {"id": "input", "kind": "input"},
        {"id": "conv1", "kind": "conv", "weight_shape": [3, 3, 3, 64]},
    ]
    edges = [["input", "conv1"]]
    prev = "conv1"
    in_planes = 64
    for stage, (planes, blocks) in enumerate(
        [(64, 3), (128, 4), (256, 6), (512, 3)], start=1
    ):
        for block in range(1, blocks + 1):
            name = f"s{stage}b{block}"
            nodes.append(
                {"id": f"{name}_conv1", "kind": "conv",
                 "weight_shape": [3, 3, in_planes, planes]}
            )
            nodes.append(
                {"id": f"{name}_conv2", "kind": "conv",
                 "weight_shape": [3, 3, planes, planes]}
            )
            nodes.append({"id": f"{name}_add", "kind": "add"})
            edges.append([prev, f"{name}_conv1"])
            edges.append([f"{name}_conv1", f"{name}_conv2"])
            edges.append([f"{name}_conv2", f"{name}_add"])
            if in_planes != planes:
                nodes.append(
                    {"id": f"{name}_down", "kind": "conv",
                     "weight_shape": [1, 1, in_planes, planes]}
                )
                edges.append([prev, f"{name}_down"])
                edges.append([f"{name}_down", f"{name}_add"])
            else:
                edges.append([prev, f"{name}_add"])
            prev = f"{name}_add"
            in_planes = planes
    nodes.append({"id": "gap", "kind": "pool"})
    nodes.append({"id": "fc", "kind": "fc", "weight_shape": [1, 1, 512, num_classes]})
    nodes.append({"id": "output", "kind": "output"})
    edges.extend([[prev, "gap"], ["gap", "fc"], ["fc", "output"]])
    return {"nodes": nodes, "edges": edges}


def build_darts7(cells=7, width=16, num_classes=2):
    nodes = [
        {"id": "input", "kind": "input"},
        {"id": "stem", "kind": "conv", "weight_shape": [3, 3, 1, width]},
        {"id": "stem_norm", "kind": "other-passthrough"},
    ]
    edges = [["input", "stem"], ["stem", "stem_norm"]]
    prev = "stem_norm"
    in_width = width
    for k in range(1, cells + 1):
        c1, c2 = f"c{k}_conv1", f"c{k}_conv2"
        add, cat = f"c{k}_add", f"c{k}_cat"
        nodes.extend(
            [
                {"id": c1, "kind": "conv", "weight_shape": [3, 3, in_width, width]},
                {"id": c2, "kind": "conv", "weight_shape": [3, 3, width, width]},
                {"id": add, "kind": "add"},
                {"id": cat, "kind": "concat"},
            ]
        )
        edges.extend(
            [
                [prev, c1],
                [c1, c2],
                [c1, add],
                [c2, add],
                [add, cat],
                [c2, cat],
            ]
        )
        prev = cat
        in_width = 2 * width
        if k in (3, 5):
            pool = f"pool{k}"
            nodes.append({"id": pool, "kind": "pool"})
            edges.append([prev, pool])
            prev = pool
    nodes.append({"id": "fc", "kind": "fc", "weight_shape": [1, 1, in_width, num_classes]})
    nodes.append({"id": "output", "kind": "output"})
    edges.extend([[prev, "fc"], ["fc", "output"]])
    return {"nodes": nodes, "edges": edges}


BUILDERS = {
    "fig3_mini": build_fig3_mini,
    "resnet34": build_resnet34,
    "darts7": build_darts7,
}


def fixture_dict(name):
    try:
        return BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}, have {sorted(BUILDERS)}") from None


def fixture_graph(name):
    return graph_from_dict(fixture_dict(name))


def fixture_path(name):
    path = resources.files("chansearch").joinpath(f"data/{name}.json")
    return Path(str(path))


def write_all(directory=None):
    """Regenerate the committed fixture JSON files."""
    directory = Path(directory) if directory else fixture_path("x").parent
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, builder in BUILDERS.items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(builder(), indent=2) + "\n")
        written.append(path)
    return written
