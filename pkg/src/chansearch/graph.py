"""Architecture DAG ingestion and validation.

The graph is the input to dependency extraction: nodes are layers (only
conv/fc carry 4D weights; fc is modeled as a 1x1 conv), edges are tensor
flow.  Pool, batch-norm and activation nodes are channel-transparent and
appear as kind "pool" or "other-passthrough".
"""

import json
from dataclasses import dataclass
from enum import Enum

WEIGHTED_KINDS = frozenset({"conv", "fc"})
PASSTHROUGH_KINDS = frozenset({"pool", "other-passthrough"})
ALL_KINDS = frozenset(
    {"conv", "fc", "add", "concat", "pool", "input", "output", "other-passthrough"}
)


class GraphError(Exception):
    """The graph JSON is malformed or violates DAG/layer invariants."""


class Side(Enum):
    """Which channel dimension of a weighted layer an endpoint addresses."""

    IN = "in"
    OUT = "out"

    @property
    def mode(self):
        """Unfold mode for this side: in-channels are dim 3, out-channels dim 4."""
        return 3 if self is Side.IN else 4

    @property
    def axis(self):
        return self.mode - 1


@dataclass(frozen=True, order=True)
class Endpoint:
    """One resizable channel dimension: (layer, in|out)."""

    layer_id: str
    side: Side

    @property
    def key(self):
        return f"{self.layer_id}.{self.side.value}"

    @staticmethod
    def parse(key):
        layer_id, _, side = key.rpartition(".")
        if not layer_id or side not in ("in", "out"):
            raise ValueError(f"bad endpoint key {key!r}, expected '<layer>.in|out'")
        return Endpoint(layer_id, Side(side))

    def __str__(self):
        return self.key


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    weight_shape: tuple | None = None


class ComputationGraph:
    """Validated immutable DAG with cached topological order."""

    def __init__(self, nodes, edges):
        self.nodes = {}
        for node in nodes:
            if node.id in self.nodes:
                raise GraphError(f"duplicate node id {node.id!r}")
            _validate_node(node)
            self.nodes[node.id] = node

        self._succ = {nid: [] for nid in self.nodes}
        self._pred = {nid: [] for nid in self.nodes}
        self.edges = []
        for src, dst in edges:
            for endpoint in (src, dst):
                if endpoint not in self.nodes:
                    raise GraphError(f"edge ({src!r}, {dst!r}) references unknown id {endpoint!r}")
            if src == dst:
                raise GraphError(f"self-loop on {src!r}")
            self._succ[src].append(dst)
            self._pred[dst].append(src)
            self.edges.append((src, dst))

        inputs = [n.id for n in self.nodes.values() if n.kind == "input"]
        if len(inputs) != 1:
            raise GraphError(f"expected exactly one input node, found {inputs}")
        self.input_id = inputs[0]
        if self._pred[self.input_id]:
            raise GraphError(f"input node {self.input_id!r} has incoming edges")

        self._topo = self._toposort()
        self._topo_index = {nid: i for i, nid in enumerate(self._topo)}
        self._check_reachable()

    def _toposort(self):
        indeg = {nid: len(self._pred[nid]) for nid in self.nodes}
        order = [nid for nid in self.nodes if indeg[nid] == 0]
        head = 0
        while head < len(order):
            nid = order[head]
            head += 1
            for nxt in self._succ[nid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    order.append(nxt)
        if len(order) != len(self.nodes):
            stuck = sorted(nid for nid, d in indeg.items() if d > 0)
            raise GraphError(f"graph has a cycle through {stuck}")
        return order

    def _check_reachable(self):
        seen = {self.input_id}
        stack = [self.input_id]
        while stack:
            for nxt in self._succ[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        missing = [nid for nid in self.nodes if nid not in seen]
        if missing:
            raise GraphError(f"nodes unreachable from input: {missing}")

    def node(self, node_id):
        try:
            return self.nodes[node_id]
        except KeyError:
            raise ValueError(f"unknown node id {node_id!r}") from None

    def successors(self, node_id):
        self.node(node_id)
        return [self.nodes[i] for i in self._succ[node_id]]

    def predecessors(self, node_id):
        self.node(node_id)
        return [self.nodes[i] for i in self._pred[node_id]]

    def topo_order(self):
        return list(self._topo)

    def topo_index(self, node_id):
        return self._topo_index[node_id]

    def weighted_layers(self):
        """Layers carrying a 4D weight, in topological order."""
        return [self.nodes[i] for i in self._topo if self.nodes[i].kind in WEIGHTED_KINDS]

    def to_dict(self):
        nodes = []
        for node in self.nodes.values():
            entry = {"id": node.id, "kind": node.kind}
            if node.weight_shape is not None:
                entry["weight_shape"] = list(node.weight_shape)
            nodes.append(entry)
        return {"nodes": nodes, "edges": [list(e) for e in self.edges]}


def _validate_node(node):
    if node.kind not in ALL_KINDS:
        raise GraphError(f"node {node.id!r}: unknown kind {node.kind!r}")
    if node.kind in WEIGHTED_KINDS:
        shape = node.weight_shape
        if shape is None:
            raise GraphError(f"node {node.id!r}: kind {node.kind!r} requires weight_shape")
        if len(shape) != 4 or any(not isinstance(s, int) or s < 1 for s in shape):
            raise GraphError(
                f"node {node.id!r}: weight_shape must be 4 positive ints, got {shape}"
            )
        if node.kind == "fc" and (shape[0] != 1 or shape[1] != 1):
            raise GraphError(
                f"node {node.id!r}: fc layers are 1x1 convolutions, got kernel "
                f"{shape[0]}x{shape[1]}"
            )
    elif node.weight_shape is not None:
        raise GraphError(f"node {node.id!r}: kind {node.kind!r} must not carry weights")


def graph_from_dict(payload):
    if not isinstance(payload, dict):
        raise GraphError("graph document must be a JSON object")
    raw_nodes = payload.get("nodes")
    raw_edges = payload.get("edges")
    if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise GraphError("graph document needs 'nodes' and 'edges' lists")
    nodes = []
    for entry in raw_nodes:
        if not isinstance(entry, dict) or "id" not in entry or "kind" not in entry:
            raise GraphError(f"bad node entry {entry!r}: need 'id' and 'kind'")
        shape = entry.get("weight_shape")
        nodes.append(
            LayerNode(
                id=str(entry["id"]),
                kind=str(entry["kind"]),
                weight_shape=tuple(shape) if shape is not None else None,
            )
        )
    edges = []
    for entry in raw_edges:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise GraphError(f"bad edge entry {entry!r}: need [src, dst]")
        edges.append((str(entry[0]), str(entry[1])))
    return ComputationGraph(nodes, edges)


def parse_graph(text):
    """Parse and validate a graph JSON document."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"unparseable graph JSON: {exc}") from exc
    return graph_from_dict(payload)


def load_graph(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())
