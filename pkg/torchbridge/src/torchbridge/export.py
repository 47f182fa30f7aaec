"""Static graph extraction from a live PyTorch model.

One concrete forward pass runs under a torch-function interception mode that
records how tensors flow through convolutions, linears, adds, concats and
pools.  Channel-transparent calls (activations, norms) become
`other-passthrough` nodes when they carry parameters and are silently
aliased otherwise (reshapes, means, scalar arithmetic).  Anything that
breaks channel bookkeeping (recurrent cells, channel splits, reused weight
tensors) raises UnsupportedModel.
"""

from dataclasses import dataclass, field

import torch
from torch.overrides import TorchFunctionMode

from .containers import conv_to_engine, linear_to_engine

WEIGHT_KINDS = {"conv2d": "conv", "linear": "fc"}
POOL_FUNCS = {"avg_pool2d", "max_pool2d", "adaptive_avg_pool2d", "adaptive_max_pool2d"}
PASSTHROUGH_FUNCS = {"relu", "relu_", "batch_norm", "layer_norm", "gelu", "silu",
                     "hardtanh", "hardtanh_", "leaky_relu", "leaky_relu_"}
ADD_FUNCS = {"add", "add_", "iadd"}
FORBIDDEN_FUNCS = {"lstm", "gru", "rnn_tanh", "rnn_relu", "lstm_cell", "gru_cell",
                   "chunk", "split", "narrow", "index_select", "unbind"}


class UnsupportedModel(Exception):
    """The model uses constructs the channel-search graph cannot express."""


@dataclass
class ExportedModel:
    graph: dict
    weights: dict  # layer_id -> engine-axis float32 array
    meta: dict = field(default_factory=dict)


def _tensors_in(args, kwargs):
    out = []
    for value in list(args) + list(kwargs.values()):
        if isinstance(value, torch.Tensor):
            out.append(value)
        elif isinstance(value, (list, tuple)):
            out.extend(v for v in value if isinstance(v, torch.Tensor))
    return out


class _Tracer(TorchFunctionMode):
    def __init__(self, model):
        super().__init__()
        self.param_names = {id(p): n for n, p in model.named_parameters()}
        self.producer = {}
        self.nodes = []
        self.edges = []
        self.hold = []  # keep traced tensors alive so ids stay unique
        self.counters = {}
        self.used_weight_ids = set()
        self.aliased = set()
        self.weights_out = {}
        self.layer_modules = {}  # layer_id -> dotted module path

    def begin(self, example):
        self.producer[id(example)] = "input"
        self.hold.append(example)
        self.nodes.append({"id": "input", "kind": "input"})

    def _fresh(self, prefix):
        self.counters[prefix] = self.counters.get(prefix, 0) + 1
        return f"{prefix}_{self.counters[prefix]}"

    def _node_name(self, func_name, args, kwargs):
        for value in list(args) + list(kwargs.values()):
            if isinstance(value, torch.Tensor) and id(value) in self.param_names:
                pname = self.param_names[id(value)]
                return pname.rsplit(".", 1)[0].replace(".", "_")
        return self._fresh(func_name)

    def _emit(self, node_id, kind, sources, out, weight_shape=None):
        node = {"id": node_id, "kind": kind}
        if weight_shape is not None:
            node["weight_shape"] = [int(s) for s in weight_shape]
        self.nodes.append(node)
        for src in sources:
            self.edges.append([src, node_id])
        self.producer[id(out)] = node_id
        self.hold.append(out)

    def __torch_function__(self, func, types, args=(), kwargs=None):
        kwargs = kwargs or {}
        out = func(*args, **kwargs)
        name = getattr(func, "__name__", "")
        traced = [t for t in _tensors_in(args, kwargs) if id(t) in self.producer]
        if not traced or not isinstance(out, torch.Tensor):
            if traced and name in FORBIDDEN_FUNCS:
                raise UnsupportedModel(f"cannot express {name!r} in the channel graph")
            return out
        sources = []
        for tensor in traced:
            src = self.producer[id(tensor)]
            if src not in sources:
                sources.append(src)

        if name in FORBIDDEN_FUNCS:
            raise UnsupportedModel(f"cannot express {name!r} in the channel graph")

        if name in WEIGHT_KINDS:
            weight = args[1] if len(args) > 1 else kwargs.get("weight")
            if id(weight) in self.used_weight_ids:
                raise UnsupportedModel(
                    "a weight tensor is used by two calls; the engine needs "
                    "one layer per weight"
                )
            self.used_weight_ids.add(id(weight))
            node_id = self._node_name(name, args, kwargs)
            if id(weight) in self.param_names:
                self.layer_modules[node_id] = self.param_names[id(weight)].rsplit(
                    ".", 1
                )[0]
            w = weight.detach().cpu().numpy()
            if name == "conv2d":
                if weight.shape[2] != weight.shape[3]:
                    raise UnsupportedModel(
                        f"non-square kernel {tuple(weight.shape[2:])} on {node_id!r}"
                    )
                groups = kwargs.get("groups", args[6] if len(args) > 6 else 1)
                if groups != 1:
                    raise UnsupportedModel(
                        f"grouped convolution on {node_id!r}: in/out channels are "
                        "coupled in ways the dependency rules do not model"
                    )
                engine_w = conv_to_engine(w)
            else:
                engine_w = linear_to_engine(w)
            self._emit(node_id, WEIGHT_KINDS[name], sources[:1], out, engine_w.shape)
            self.weights_out[node_id] = engine_w.astype("float32")
        elif name in ADD_FUNCS and len(sources) >= 2:
            self._emit(self._fresh("add"), "add", sources, out)
        elif name == "cat" and len(traced) >= 2:
            self._emit(self._fresh("cat"), "concat", sources, out)
        elif name in POOL_FUNCS:
            self._emit(self._fresh("pool"), "pool", sources[:1], out)
        elif name in PASSTHROUGH_FUNCS:
            self._emit(self._node_name(name, args, kwargs), "other-passthrough",
                       sources[:1], out)
        else:
            # channel-transparent by assumption: reshapes, means, scalar math
            self.aliased.add(name)
            self.producer[id(out)] = sources[0]
            self.hold.append(out)
        return out


def export_model(model, example_input):
    """Trace one forward pass and return the engine-format graph and weights."""
    model = model.eval()
    tracer = _Tracer(model)
    example = example_input.detach().clone()
    with torch.no_grad(), tracer:
        tracer.begin(example)
        result = model(example)
    if not isinstance(result, torch.Tensor) or id(result) not in tracer.producer:
        raise UnsupportedModel("forward did not return a traced tensor")
    tracer.nodes.append({"id": "output", "kind": "output"})
    tracer.edges.append([tracer.producer[id(result)], "output"])
    graph = {"nodes": tracer.nodes, "edges": tracer.edges}
    meta = {
        "torch_version": torch.__version__,
        "trace": "torch-function interception, single concrete forward",
        "aliased_ops": sorted(tracer.aliased),
        "layers": dict(tracer.layer_modules),
        "note": "norm-layer statistics are not exported; a rebuild at new "
                "channel sizes reinitializes them",
    }
    return ExportedModel(graph=graph, weights=tracer.weights_out, meta=meta)


def load_engine_weights(model, tensors, layer_map=None):
    """Load engine-format tensors back into matching torch modules, in place.

    layer_map: optional {layer_id: dotted module path} from the export meta;
    without it, underscores in layer ids are read as module-path dots.
    """
    from .containers import conv_from_engine, linear_from_engine

    named = dict(model.named_modules())
    layer_map = layer_map or {}
    for layer_id, arr in tensors.items():
        path = layer_map.get(layer_id, layer_id)
        module = named.get(path)
        if module is None:
            module = named.get(path.replace("_", "."))
        if module is None or not hasattr(module, "weight"):
            raise UnsupportedModel(f"no module found for layer {layer_id!r}")
        if isinstance(module, torch.nn.Conv2d):
            w = conv_from_engine(arr)
        elif isinstance(module, torch.nn.Linear):
            w = linear_from_engine(arr)
        else:
            raise UnsupportedModel(f"layer {layer_id!r} maps to {type(module).__name__}")
        if tuple(module.weight.shape) != w.shape:
            raise UnsupportedModel(
                f"layer {layer_id!r}: container shape {w.shape} does not match "
                f"module weight {tuple(module.weight.shape)}"
            )
        with torch.no_grad():
            module.weight.copy_(torch.from_numpy(w.copy()))
    return model
