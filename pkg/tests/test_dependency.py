import json

import pytest

from chansearch.dependency import (
    UnsupportedTopology,
    check_partition,
    export_visualizer,
    extract_dependencies,
    oracle_dependencies,
    partition_signature,
    sizes_from_shapes,
)
from chansearch.fixtures import fixture_graph, fixture_path
from chansearch.graph import graph_from_dict
from oracles import parse_dot, random_dag_dict


def simple_chain(n):
    nodes = [{"id": "input", "kind": "input"}]
    edges = []
    prev = "input"
    for i in range(1, n + 1):
        nodes.append({"id": f"conv{i}", "kind": "conv", "weight_shape": [3, 3, 4, 4]})
        edges.append([prev, f"conv{i}"])
        prev = f"conv{i}"
    nodes.append({"id": "output", "kind": "output"})
    edges.append([prev, "output"])
    return graph_from_dict({"nodes": nodes, "edges": edges})


def test_chain_partition():
    deps = extract_dependencies(simple_chain(3))
    assert [g.keys() for g in deps.groups] == [
        ["conv1.in"],
        ["conv1.out", "conv2.in"],
        ["conv2.out", "conv3.in"],
        ["conv3.out"],
    ]
    assert deps.derived == []
    # data and class endpoints are pinned, middles are searchable
    assert [g.fixed for g in deps.groups] == [True, False, False, True]


def test_single_conv():
    deps = extract_dependencies(simple_chain(1))
    assert [g.keys() for g in deps.groups] == [["conv1.in"], ["conv1.out"]]


def test_fig3_merge():
    # conv1 -> conv2 -> add, conv1 -> add (skip), add -> conv3: the add merges
    # conv1.out, conv2.out and conv3.in into conv1.out's group
    g = fixture_graph("fig3_mini")
    deps = extract_dependencies(g)
    assert [g_.keys() for g_ in deps.groups] == [
        ["conv1.in"],
        ["conv1.out", "conv2.in", "conv2.out", "conv3.in"],
        ["conv3.out"],
    ]


def test_oracle_matches_on_fixtures():
    for name in ("fig3_mini", "darts7", "resnet34"):
        g = fixture_graph(name)
        assert partition_signature(extract_dependencies(g)) == partition_signature(
            oracle_dependencies(g)
        )


def test_oracle_matches_on_random_dags():
    for seed in range(30):
        g = graph_from_dict(random_dag_dict(seed, with_concat=(seed % 3 == 0)))
        deps = extract_dependencies(g)
        oracle = oracle_dependencies(g)
        assert partition_signature(deps) == partition_signature(oracle), f"seed {seed}"


def test_partition_property_on_random_dags():
    for seed in range(10):
        g = graph_from_dict(random_dag_dict(seed, with_concat=True))
        check_partition(g, extract_dependencies(g))


def test_extraction_deterministic():
    g = fixture_graph("darts7")
    a, b = extract_dependencies(g), extract_dependencies(g)
    assert a.to_dict() == b.to_dict()


def test_merge_into_lowest_index():
    # two parallel branches joined by an add: the branch created first keeps
    # its group identity
    doc = {
        "nodes": [
            {"id": "input", "kind": "input"},
            {"id": "stem", "kind": "conv", "weight_shape": [3, 3, 1, 4]},
            {"id": "left", "kind": "conv", "weight_shape": [3, 3, 4, 4]},
            {"id": "right", "kind": "conv", "weight_shape": [3, 3, 4, 4]},
            {"id": "join", "kind": "add"},
            {"id": "head", "kind": "conv", "weight_shape": [3, 3, 4, 4]},
            {"id": "output", "kind": "output"},
        ],
        "edges": [
            ["input", "stem"],
            ["stem", "left"],
            ["stem", "right"],
            ["left", "join"],
            ["right", "join"],
            ["join", "head"],
            ["head", "output"],
        ],
    }
    deps = extract_dependencies(graph_from_dict(doc))
    merged = [g for g in deps.groups if "left.out" in g.keys()][0]
    # left.out's group was created before right.out's: merge lands there and
    # endpoint order follows assignment order
    assert merged.keys() == ["left.out", "right.out", "head.in"]


def test_darts7_derived_groups():
    g = fixture_graph("darts7")
    deps = extract_dependencies(g)
    assert len(deps.derived) == 7
    for derived in deps.derived:
        assert len(derived.sources) == 2
        # both concat inputs come from the same merged cell group
        assert derived.sources[0] == derived.sources[1]
    fc_in = deps.group_of("fc.in")
    assert fc_in.startswith("d")


def test_concat_feeding_add_unsupported():
    doc = {
        "nodes": [
            {"id": "input", "kind": "input"},
            {"id": "a", "kind": "conv", "weight_shape": [3, 3, 1, 4]},
            {"id": "b", "kind": "conv", "weight_shape": [3, 3, 4, 4]},
            {"id": "cat", "kind": "concat"},
            {"id": "bad", "kind": "add"},
            {"id": "c", "kind": "conv", "weight_shape": [3, 3, 8, 8]},
            {"id": "output", "kind": "output"},
        ],
        "edges": [
            ["input", "a"],
            ["a", "b"],
            ["a", "cat"],
            ["b", "cat"],
            ["cat", "bad"],
            ["b", "bad"],
            ["bad", "c"],
            ["c", "output"],
        ],
    }
    g = graph_from_dict(doc)
    with pytest.raises(UnsupportedTopology):
        extract_dependencies(g)
    with pytest.raises(UnsupportedTopology):
        oracle_dependencies(g)


def test_resnet34_matches_frozen_answer():
    g = fixture_graph("resnet34")
    deps = extract_dependencies(g)
    frozen = json.loads(fixture_path("resnet34_deps_expected").read_text())
    assert deps.to_dict() == frozen
    # every residual stage couples its block convs through one spine group
    spine = deps.group(deps.group_of("s1b1_conv2.out"))
    assert "s1b2_conv1.in" in spine.keys()
    assert "s1b3_conv2.out" in spine.keys()


def test_visualizer_chain_golden():
    g = simple_chain(3)
    deps = extract_dependencies(g)
    sizes = sizes_from_shapes(g, deps)
    dot_text, doc = export_visualizer(g, deps, sizes)
    nodes, edges = parse_dot(dot_text)
    assert set(nodes) >= {"conv1", "conv2", "conv3"}
    assert ("conv1", "conv2") in edges and ("conv2", "conv3") in edges
    # endpoints of one group share the color; dependents get alpha 0x99
    conv1_out = next(l for l in doc["layers"] if l["id"] == "conv1")["out_color"]
    conv2_in = next(l for l in doc["layers"] if l["id"] == "conv2")["in_color"]
    assert conv1_out[:7] == conv2_in[:7]
    assert conv1_out.endswith("ff") and conv2_in.endswith("99")


def test_visualizer_resnet34_parses_and_fc_square():
    g = fixture_graph("resnet34")
    deps = extract_dependencies(g)
    dot_text, doc = export_visualizer(g, deps, sizes_from_shapes(g, deps))
    nodes, edges = parse_dot(dot_text)
    assert len(nodes) >= 37 and len(edges) > 37
    assert "shape=box, style=striped" in dot_text  # the fc head
    assert dot_text.count("style=wedged") == 36


def test_visualizer_missing_size():
    g = simple_chain(2)
    deps = extract_dependencies(g)
    sizes = sizes_from_shapes(g, deps)
    sizes.pop(deps.group_of("conv1.out"))
    with pytest.raises(ValueError, match="no size"):
        export_visualizer(g, deps, sizes)


def test_sizes_from_shapes_inconsistent():
    doc = {
        "nodes": [
            {"id": "input", "kind": "input"},
            {"id": "a", "kind": "conv", "weight_shape": [3, 3, 1, 4]},
            {"id": "b", "kind": "conv", "weight_shape": [3, 3, 8, 4]},
            {"id": "output", "kind": "output"},
        ],
        "edges": [["input", "a"], ["a", "b"], ["b", "output"]],
    }
    g = graph_from_dict(doc)
    deps = extract_dependencies(g)
    with pytest.raises(ValueError, match="size"):
        sizes_from_shapes(g, deps)
