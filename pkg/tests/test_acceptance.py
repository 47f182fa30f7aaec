"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run `pytest tests/test_acceptance.py -v`; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import math
import time

import mpmath as mp
import numpy as np
import pytest

from chansearch.cli import main as cli_main
from chansearch.dependency import (
    extract_dependencies,
    oracle_dependencies,
    partition_signature,
)
from chansearch.distill import ResizePlan, expand, shrink, transfer
from chansearch.fixtures import fixture_graph, fixture_path
from chansearch.graph import Side, graph_from_dict
from chansearch.metric import (
    cumulative_metric,
    effective_rank,
    qc_value,
    singular_values,
)
from chansearch.search import (
    SearchConfig,
    accept,
    apply_scale,
    run_search,
    scale_factor,
    temperature,
)
from chansearch.tensorio import WeightTensor, read_weights, unfold
from chansearch.trainer import MockTrainer, ToyTrainer, _softmax_xent, surface_from_spec
from oracles import (
    closed_form_momentum,
    jacobi_singular_values,
    numeric_gradients,
    random_dag_dict,
    ref_effective_rank,
    ref_qc,
)

HALF_PI = math.pi / 2


def test_criterion_dependency_oracle_equivalence():
    """100 seeded random DAGs plus all fixtures, exact partition match, < 5 s."""
    start = time.monotonic()
    for seed in range(100):
        doc = random_dag_dict(seed, max_nodes=30, with_concat=(seed % 4 == 0))
        add_edges = sum(1 for _, dst in doc["edges"] if dst.startswith("add"))
        assert add_edges / len(doc["edges"]) >= 0.20
        assert len(doc["nodes"]) <= 30
        graph = graph_from_dict(doc)
        assert partition_signature(extract_dependencies(graph)) == partition_signature(
            oracle_dependencies(graph)
        ), f"seed {seed}"
    for name in ("resnet34", "darts7", "fig3_mini"):
        graph = fixture_graph(name)
        assert partition_signature(extract_dependencies(graph)) == partition_signature(
            oracle_dependencies(graph)
        ), name
    assert time.monotonic() - start < 5.0


def test_criterion_qc_correctness():
    """sigma/N'/kappa/QC vs the Jacobi oracle within 1e-6; bounds; invariance."""
    rng = np.random.default_rng(2024)
    tau = 0.01
    for _ in range(50):
        rows = int(rng.integers(2, 65))
        cols = int(rng.integers(rows, 257))
        mat = rng.standard_normal((rows, cols))
        sigmas = singular_values(mat)
        ref = jacobi_singular_values(mat)
        np.testing.assert_allclose(sigmas, ref, atol=1e-6 * ref[0])
        n_eff = effective_rank(sigmas, tau)
        assert n_eff == ref_effective_rank(ref, tau)
        kappa = sigmas[0] / sigmas[n_eff - 1]
        ref_kappa = ref[0] / ref[n_eff - 1]
        assert abs(kappa - ref_kappa) < 1e-6 * ref_kappa
        qc = qc_value(n_eff, rows, kappa)
        assert abs(qc - ref_qc(ref, rows, tau)) < 1e-6

    # bounds over randomized inputs including zero, rank-1 and kappa=1 cases
    for i in range(10_000):
        kind = i % 4
        rows = int(rng.integers(1, 10))
        cols = int(rng.integers(1, 14))
        if kind == 0:
            mat = rng.standard_normal((rows, cols))
        elif kind == 1:
            mat = np.zeros((rows, cols))
        elif kind == 2:
            mat = np.outer(rng.standard_normal(rows), rng.standard_normal(cols))
        else:
            mat = float(rng.uniform(0.1, 5.0)) * np.eye(rows, cols)
        s = singular_values(mat)
        n_eff = effective_rank(s, tau)
        kappa = s[0] / s[n_eff - 1] if n_eff else None
        qc = qc_value(n_eff, rows, kappa)
        assert 0.0 <= qc <= HALF_PI

    # scale invariance at 1e-9
    def qc_of(mat):
        s = singular_values(mat)
        n_eff = effective_rank(s, tau)
        kappa = s[0] / s[n_eff - 1] if n_eff else None
        return qc_value(n_eff, mat.shape[0], kappa)

    for _ in range(50):
        mat = rng.standard_normal((int(rng.integers(2, 20)), int(rng.integers(2, 40))))
        base = qc_of(mat)
        for c in (1e-4, 0.3, 2.0, 1e4):
            assert abs(qc_of(c * mat) - base) < 1e-9


def test_criterion_momentum_algebra():
    """gamma=0 is the plain mean exactly; gamma=0.9 matches the closed form."""
    from chansearch.metric import GroupMetricState, group_momentum

    rng = np.random.default_rng(3)
    state = GroupMetricState("g")
    scores = list(rng.uniform(0.0, HALF_PI, size=5))
    group_momentum(state, scores, 0.0)
    assert state.m_curr == sum(scores) / len(scores)  # exact

    means = list(rng.uniform(0.0, HALF_PI, size=35))
    closed = closed_form_momentum(means, 0.9)
    state = GroupMetricState("g")
    for t, mean in enumerate(means, start=1):
        group_momentum(state, [mean], 0.9)
        assert abs(state.m_curr - closed[t - 1]) < 1e-12


def test_criterion_clip_and_rounding():
    """10,000 random (S, delta_m): step in [0.5, 2], integer sizes in bounds."""
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        size = int(rng.integers(1, 600))
        delta = float(rng.uniform(-6.0, 6.0))
        step = scale_factor(delta, (0.5, 2.0))
        assert 0.5 <= step <= 2.0
        new = apply_scale(size, step, 1)
        assert isinstance(new, int)
        assert 1 <= new <= 2 * size


def test_criterion_knowledge_distillation():
    """Rank bound, truncation <= row-deletion, prefix/no-op identity, oracles."""
    rng = np.random.default_rng(55)
    for _ in range(100):
        rows = int(rng.integers(3, 16))
        cols = int(rng.integers(rows, 28))
        mat = rng.standard_normal((rows, cols))
        k = int(rng.integers(1, rows))
        shrunk = shrink(mat, k)
        out_sigmas = jacobi_singular_values(shrunk)
        assert out_sigmas.size <= k or out_sigmas[k] < 1e-8 * out_sigmas[0]
        ref = jacobi_singular_values(mat)
        truncation_err = float(np.sqrt(np.sum(ref[k:] ** 2)))
        deletion_err = float(np.linalg.norm(mat[k:]))
        assert truncation_err <= deletion_err + 1e-9

        new_rows = int(rng.integers(rows + 1, 2 * rows + 1))
        grown = expand(mat.astype(np.float32), new_rows)
        assert grown[:rows].tobytes() == mat.astype(np.float32).tobytes()

    tensor = WeightTensor("w", rng.standard_normal((3, 3, 4, 6)))
    assert transfer(tensor) is tensor

    # full transfer vs independently composed resizes
    got = transfer(
        tensor,
        plan_in=ResizePlan("w", Side.IN, 4, 2),
        plan_out=ResizePlan("w", Side.OUT, 6, 9),
    )
    data = tensor.data.astype(np.float64)
    mat4 = unfold(data, 4)
    grown = np.vstack([mat4, mat4[6 - 3:][::-1]])
    from chansearch.tensorio import refold

    step1 = refold(grown, 4, (3, 3, 4, 9))
    mat3 = unfold(step1, 3)
    u, s, vt = np.linalg.svd(mat3, full_matrices=False)
    shrunk = u[:2, :2] @ np.diag(s[:2]) @ vt[:2]
    expected = refold(shrunk, 3, (3, 3, 2, 9))
    np.testing.assert_allclose(got.data, expected, atol=1e-5)


def test_criterion_sa_mechanics():
    """Temperature and acceptance values vs scalar oracles; greedy reduction."""
    assert abs(temperature(1, 35, 5.0) - float(mp.mpf(5) * 34 / 35)) < 1e-9
    assert temperature(35, 35, 5.0) == 0.0

    zeta_oracle = float(
        mp.e ** (-1 / (mp.mpf(5) * mp.mpf("0.1") * (mp.mpf(5) * 34 / 35)))
    )

    class Always:
        def __init__(self, value):
            self.value = value

        def random(self):
            return self.value

    accepted, zeta = accept(0.1, temperature(1, 35, 5.0), 5.0, Always(0.0))
    assert abs(zeta - zeta_oracle) < 1e-6
    assert accepted

    assert accept(0.1, temperature(35, 35, 5.0), 5.0, Always(0.0)) == (False, 0.0)
    assert accept(-0.3, temperature(1, 35, 5.0), 5.0, Always(0.0)) == (False, 0.0)

    # SA with an all-reject stream reproduces greedy trial-by-trial
    graph = _mock_bed()
    deps = extract_dependencies(graph)
    surface = surface_from_spec(
        {"kind": "table", "points": [[4, 0.3], [24, 1.2], [96, 0.4]]}
    )
    per_algo = {}
    for algo, rng in (("greedy", None), ("sa", Always(1.0))):
        config = SearchConfig(
            algorithm=algo, trials=6, epochs=1, gamma=0.5, seed=13, init_size=16
        )
        result, _ = run_search(
            graph, None, deps, config, MockTrainer(graph, deps, surface), sa_rng=rng
        )
        per_algo[algo] = [r["sizes"] for r in result.trials]
    assert per_algo["greedy"] == per_algo["sa"]


def test_criterion_toy_trainer():
    """Analytic gradients within 1e-4 relative of central differences; determinism."""
    graph = graph_from_dict(
        {
            "nodes": [
                {"id": "input", "kind": "input"},
                {"id": "c1", "kind": "conv", "weight_shape": [3, 3, 1, 2]},
                {"id": "pt", "kind": "other-passthrough"},
                {"id": "c2", "kind": "conv", "weight_shape": [3, 3, 2, 2]},
                {"id": "join", "kind": "add"},
                {"id": "cat", "kind": "concat"},
                {"id": "pool", "kind": "pool"},
                {"id": "head", "kind": "fc", "weight_shape": [1, 1, 4, 2]},
                {"id": "output", "kind": "output"},
            ],
            "edges": [
                ["input", "c1"],
                ["c1", "pt"],
                ["pt", "c2"],
                ["c2", "join"],
                ["pt", "join"],
                ["join", "cat"],
                ["c2", "cat"],
                ["cat", "pool"],
                ["pool", "head"],
                ["head", "output"],
            ],
        }
    )
    trainer = ToyTrainer(graph)
    rng = np.random.default_rng(42)
    params = {
        l.id: 0.4 * rng.standard_normal(l.weight_shape)
        for l in graph.weighted_layers()
    }
    images = rng.standard_normal((6, 1, 8, 8))
    labels = np.array([0, 1, 1, 0, 1, 0])
    _, analytic = trainer.forward_backward(params, images, labels)

    def loss_fn(p):
        return _softmax_xent(trainer.forward(p, images), labels)[0]

    numeric = numeric_gradients(loss_fn, params)
    for lid in params:
        ga, gn = analytic[lid], numeric[lid]
        mask = np.abs(gn) >= 1e-6
        assert (np.abs(ga - gn)[mask] / np.abs(gn)[mask]).max() < 1e-4
        assert np.abs(ga - gn)[~mask].max(initial=0.0) < 1e-8

    # byte-exact determinism
    chain = fixture_graph("darts7")
    toy = ToyTrainer(chain)
    from chansearch.search import init_random_weights, initial_sizes

    deps = extract_dependencies(chain)
    sizes = initial_sizes(chain, deps, 8)
    blobs = []
    for _ in range(2):
        weights = init_random_weights(chain, deps, sizes, 11)
        trained, loss, acc = toy.train(weights, sizes, 1, 1, 11)
        blobs.append(
            (b"".join(trained[k].data.tobytes() for k in sorted(trained)), loss, acc)
        )
    assert blobs[0] == blobs[1]


def _mock_bed(width=16, layers=4):
    nodes = [{"id": "input", "kind": "input"}]
    edges = []
    prev = "input"
    for i in range(1, layers + 1):
        nodes.append(
            {"id": f"conv{i}", "kind": "conv", "weight_shape": [3, 3, width, width]}
        )
        edges.append([prev, f"conv{i}"])
        prev = f"conv{i}"
    nodes.append({"id": "output", "kind": "output"})
    edges.append([prev, "output"])
    return graph_from_dict({"nodes": nodes, "edges": edges})


def _run_dir_blob(run_dir):
    parts = []
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            parts.append(path.relative_to(run_dir).as_posix().encode())
            parts.append(path.read_bytes())
    return b"".join(parts)


def test_criterion_end_to_end_desk_run(tmp_path):
    """darts7, init 16, T=5, e=1, toy trainer: < 2 min, rerun byte-identical."""
    args = [
        "search", str(fixture_path("darts7")), "--algorithm", "greedy",
        "--gamma", "0", "--trials", "5", "--epochs", "1", "--seed", "7",
        "--init-size", "16", "--trainer", "toy",
    ]
    start = time.monotonic()
    assert cli_main(args + ["--out", str(tmp_path / "run_a")]) == 0
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"desk run took {elapsed:.1f}s"
    assert cli_main(args + ["--out", str(tmp_path / "run_b")]) == 0
    assert _run_dir_blob(tmp_path / "run_a") == _run_dir_blob(tmp_path / "run_b")

    result = json.loads((tmp_path / "run_a" / "search_result.json").read_text())
    assert len(result["trials"]) == 5
    weights = read_weights(tmp_path / "run_a" / "final_weights")
    graph = fixture_graph("darts7")
    deps = extract_dependencies(graph)
    for layer in graph.weighted_layers():
        for side in (Side.IN, Side.OUT):
            gid = deps.group_of(f"{layer.id}.{side.value}")
            assert weights[layer.id].shape[side.axis] == result["best_plan"][gid]

    # mock testbed with a surface peaking at 24: greedy's per-group best size
    # settles (unchanged over the final two trials)
    graph = _mock_bed()
    deps = extract_dependencies(graph)
    surface = surface_from_spec(
        {"kind": "table", "points": [[4, 0.2], [16, 0.8], [32, 0.8], [64, 0.1]]}
    )
    config = SearchConfig(
        algorithm="greedy", trials=6, epochs=1, gamma=0.0, seed=5, init_size=16
    )
    result, _ = run_search(graph, None, deps, config, MockTrainer(graph, deps, surface))
    for group in deps.searchable():
        tail = [r["groups"][group.group_id]["best_size"] for r in result.trials[-2:]]
        assert tail[0] == tail[1]


def test_criterion_trace_fidelity(tmp_path):
    """Cumulative CSV recomputes exactly from the per-endpoint traces."""
    graph_path = fixture_path("darts7")
    run_dir = tmp_path / "run"
    assert cli_main([
        "search", str(graph_path), "--algorithm", "greedy", "--gamma", "0",
        "--trials", "3", "--epochs", "1", "--seed", "9", "--trainer", "toy",
        "--out", str(run_dir),
    ]) == 0
    csv_path = tmp_path / "cumulative.csv"
    assert cli_main([
        "export-traces", str(run_dir), "--what", "cumulative", "--out", str(csv_path),
    ]) == 0

    deps = extract_dependencies(fixture_graph("darts7"))
    rows = csv_path.read_text().strip().splitlines()[1:]
    assert len(rows) == 3
    for row in rows:
        trial, value = row.split(",")
        record = json.loads(
            (run_dir / "trials" / f"metrics_trial_{trial}.json").read_text()
        )
        recomputed = cumulative_metric(
            deps, {k: v["qc"] for k, v in record["endpoints"].items()}
        )
        assert float(value) == recomputed  # bit-exact
        assert record["cumulative"] == recomputed
