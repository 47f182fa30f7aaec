"""torchbridge CLI: export a model, or serve the trainer protocol."""

import argparse
import importlib
import json
import sys
from pathlib import Path

from .containers import write_container, write_graph
from .export import export_model
from .serve import serve_trainer


def _resolve(spec):
    """Load 'module:attr'; attr may be a model instance, class or factory."""
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"--model must look like module:attr, got {spec!r}")
    target = getattr(importlib.import_module(module_name), attr)
    return target


def cmd_export(args):
    import torch

    target = _resolve(args.model)
    model = target if isinstance(target, torch.nn.Module) else target()
    if not isinstance(model, torch.nn.Module):
        raise TypeError(f"{args.model!r} did not produce a torch module")
    example = torch.zeros(1, args.channels, args.size, args.size)
    exported = export_model(model, example)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(exported.graph, out / "graph.json")
    write_container(exported.weights, out / "weights")
    (out / "meta.json").write_text(json.dumps(exported.meta, indent=2) + "\n")
    print(f"exported {len(exported.weights)} weighted layers to {out}")
    return 0


def cmd_serve(args):
    target = _resolve(args.model)
    layer_map = {}
    if args.meta:
        layer_map = json.loads(Path(args.meta).read_text()).get("layers", {})
    dataset_cfg = json.loads(args.dataset) if args.dataset else None
    serve_trainer(
        args.protocol,
        target,
        dataset_cfg=dataset_cfg,
        trials=args.trials,
        layer_map=layer_map,
        timeout_s=args.timeout,
    )
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="torchbridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="trace a model to graph.json + weights/")
    p.add_argument("--model", required=True, help="module:attr (instance or factory)")
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--size", type=int, default=8)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="answer engine training requests")
    p.add_argument("--model", required=True,
                   help="module:attr, a factory taking a {layer: shape} map")
    p.add_argument("--protocol", required=True, help="protocol directory")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--meta", help="meta.json from export (layer name map)")
    p.add_argument("--dataset", help="JSON dataset config overrides")
    p.add_argument("--timeout", type=float, default=300.0)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"torchbridge: error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
