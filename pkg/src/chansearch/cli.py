"""Command-line front end: extract-deps, metric, search, export-traces.

Every command is deterministic given its flags and seed; a run directory
carries a manifest (the only file with wall-clock content) so runs can be
replayed byte-for-byte.
"""

import argparse
import csv
import io
import json
import shutil
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dependency import (
    UnsupportedTopology,
    export_visualizer,
    extract_dependencies,
    sizes_from_shapes,
)
from .graph import GraphError, load_graph
from .metric import layer_metric
from .search import (
    SearchAbort,
    SearchConfig,
    chained_transfer,
    compound_baseline,
    init_random_weights,
    initial_sizes,
    random_baseline,
    run_search,
)
from .tensorio import FormatError, read_weights, write_weights
from .trainer import ExternalTrainer, MockTrainer, ToyTrainer, TrainerError, surface_from_spec
from .graph import Endpoint, Side

RUNTIME_ERRORS = (
    GraphError,
    FormatError,
    SearchAbort,
    TrainerError,
    UnsupportedTopology,
    ValueError,
    KeyError,
    OSError,
)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_or_print(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _existing_file(parser, path):
    if not Path(path).is_file():
        parser.error(f"no such file: {path}")
    return Path(path)


def cmd_extract_deps(parser, args):
    graph = load_graph(_existing_file(parser, args.graph))
    deps = extract_dependencies(graph)
    _write_or_print(deps.to_json(), args.out)
    if args.dot:
        sizes = sizes_from_shapes(graph, deps)
        dot_text, _ = export_visualizer(graph, deps, sizes)
        Path(args.dot).write_text(dot_text)
    return 0


def cmd_metric(parser, args):
    if not 0.0 < args.tau < 1.0:
        parser.error(f"--tau must be in (0, 1), got {args.tau}")
    graph = load_graph(_existing_file(parser, args.graph))
    weights = read_weights(args.weights_dir)
    report = {}
    for layer in graph.weighted_layers():
        if layer.id not in weights:
            raise FormatError(f"weights container is missing layer {layer.id!r}")
        for side in (Side.IN, Side.OUT):
            summary = layer_metric(weights[layer.id], side, args.tau)
            report[Endpoint(layer.id, side).key] = summary.to_dict()
    _write_or_print(_dump(report), args.out)
    return 0


def _make_trainer(parser, spec, graph, deps, config, timeout_s):
    if spec == "toy":
        return ToyTrainer(graph)
    if spec.startswith("external:"):
        return ExternalTrainer(spec.split(":", 1)[1], timeout_s=timeout_s)
    if spec.startswith("mock:"):
        path = _existing_file(parser, spec.split(":", 1)[1])
        surface_spec = json.loads(path.read_text())
        return MockTrainer(graph, deps, surface_from_spec(surface_spec), config.tau)
    parser.error(f"--trainer must be toy, external:DIR or mock:FILE, got {spec!r}")


def _build_config(parser, args):
    settings = {}
    if args.config:
        path = _existing_file(parser, args.config)
        settings.update(json.loads(path.read_text()))
    for key in (
        "algorithm",
        "trials",
        "epochs",
        "gamma",
        "alpha",
        "seed",
        "tau",
        "init_size",
        "min_channel",
        "width_mult",
    ):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.granularity is not None:
        settings["train_granularity"] = args.granularity
    if "clip" in settings:
        settings["clip"] = tuple(settings["clip"])
    try:
        return SearchConfig(**settings)
    except (TypeError, ValueError) as exc:
        parser.error(f"bad search configuration: {exc}")


def cmd_search(parser, args):
    graph_path = _existing_file(parser, args.graph)
    graph = load_graph(graph_path)
    deps = extract_dependencies(graph)
    config = _build_config(parser, args)
    weights = read_weights(args.weights) if args.weights else None

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()

    if config.algorithm in ("random", "compound"):
        base = initial_sizes(graph, deps, config.init_size, weights)
        if config.algorithm == "random":
            plan = random_baseline(deps, base, config)
        else:
            plan = compound_baseline(deps, base, config.width_mult, config.min_channel)
        if weights is None:
            final_weights = init_random_weights(graph, deps, plan, config.seed)
        else:
            final_weights = chained_transfer(graph, deps, weights, base, plan)
        result_doc = {
            "algorithm": config.algorithm,
            "config": config.to_dict(),
            "init_sizes": base,
            "best_plan": plan,
            "final_sizes": plan,
            "best_meta": {},
            "trials": [],
        }
        trial_records = []
    else:
        trainer = _make_trainer(parser, args.trainer, graph, deps, config, args.timeout)
        result, weights_after = run_search(graph, weights, deps, config, trainer)
        final_weights = chained_transfer(
            graph, deps, weights_after, result.final_sizes, result.best_plan,
            config.min_channel,
        )
        result_doc = result.to_dict()
        trial_records = result.trials

    (run_dir / "search_result.json").write_text(_dump(result_doc))
    (run_dir / "best_plan.json").write_text(_dump(result_doc["best_plan"]))
    trials_dir = run_dir / "trials"
    shutil.rmtree(trials_dir, ignore_errors=True)
    trials_dir.mkdir()
    for record in trial_records:
        path = trials_dir / f"metrics_trial_{record['trial']}.json"
        path.write_text(_dump(record))
    weights_dir = run_dir / "final_weights"
    shutil.rmtree(weights_dir, ignore_errors=True)
    write_weights(final_weights, weights_dir)

    manifest = {
        "tool": "chansearch",
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "graph": str(graph_path),
        "weights": str(args.weights) if args.weights else None,
        "trainer": args.trainer,
        "config": config.to_dict(),
        "outputs": {
            "result": "search_result.json",
            "best_plan": "best_plan.json",
            "trials": "trials/",
            "final_weights": "final_weights/",
        },
    }
    (run_dir / "manifest.json").write_text(_dump(manifest))
    return 0


def _load_result(parser, run_dir):
    path = Path(run_dir) / "search_result.json"
    if not path.is_file():
        parser.error(f"no search_result.json under {run_dir}")
    return json.loads(path.read_text())


def cmd_export_traces(parser, args):
    result = _load_result(parser, args.run_dir)
    records = result.get("trials", [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if args.what == "cumulative":
        writer.writerow(["trial", "cumulative"])
        for record in records:
            writer.writerow([record["trial"], repr(record["cumulative"])])
    elif args.what == "metric-evolution":
        writer.writerow(["trial", "endpoint", "qc"])
        for record in records:
            for key in sorted(record["endpoints"]):
                writer.writerow([record["trial"], key, repr(record["endpoints"][key]["qc"])])
    else:  # channel-evolution
        writer.writerow(["trial", "group", "size"])
        for record in records:
            for gid in sorted(record["sizes"]):
                writer.writerow([record["trial"], gid, record["sizes"][gid]])
    _write_or_print(buf.getvalue(), args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chansearch",
        description="Channel-size search over convolutional architecture graphs.",
    )
    parser.add_argument("--version", action="version", version=f"chansearch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-deps", help="extract channel dependency groups")
    p.add_argument("graph")
    p.add_argument("--out", help="write deps JSON here instead of stdout")
    p.add_argument("--dot", help="also write the channel visualizer DOT file")
    p.set_defaults(func=cmd_extract_deps)

    p = sub.add_parser("metric", help="per-endpoint spectral quality report")
    p.add_argument("graph")
    p.add_argument("weights_dir")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("search", help="run a channel-size search")
    p.add_argument("graph")
    p.add_argument("--weights", help="starting weights container (default: seeded random)")
    p.add_argument("--config", help="JSON file with SearchConfig fields")
    p.add_argument("--algorithm", choices=["greedy", "sa", "random", "compound"])
    p.add_argument("--trials", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--init-size", dest="init_size", type=int)
    p.add_argument("--min-channel", dest="min_channel", type=int)
    p.add_argument("--width-mult", dest="width_mult", type=float)
    p.add_argument("--granularity", choices=["per_trial", "per_group"])
    p.add_argument("--trainer", default="toy", help="toy | external:DIR | mock:FILE")
    p.add_argument("--timeout", type=float, default=120.0,
                   help="external trainer timeout per trial, seconds")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("export-traces", help="flatten run traces to CSV")
    p.add_argument("run_dir")
    p.add_argument(
        "--what",
        choices=["metric-evolution", "cumulative", "channel-evolution"],
        required=True,
    )
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_traces)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except RUNTIME_ERRORS as exc:
        print(f"chansearch: error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
