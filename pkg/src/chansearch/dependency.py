"""Channel dependency extraction: partition channel endpoints into groups
that must be resized jointly.

One forward traversal assigns each weighted layer's IN endpoint to the
channel group arriving on its input edge and opens a fresh group at its OUT
endpoint.  Element-wise add nodes merge every arriving group into one
(residual connections couple all their producers and consumers).  Reaching
an already-assigned endpoint therefore merges the working group into the
existing one, lowest group index winning.

Concat nodes produce *derived* groups: their consumers' IN size is always
the sum of the source group sizes, so derived groups are recomputed rather
than searched.  Groups tied to the graph's input or output node (data
channels, class counts) are kept in the partition but flagged fixed.
"""

import colorsys
import json
from dataclasses import dataclass, field

from .graph import Endpoint, Side, PASSTHROUGH_KINDS, WEIGHTED_KINDS

DATA_WIRE = "@data"


class UnsupportedTopology(Exception):
    """The graph mixes concat outputs into contexts we cannot resize."""


@dataclass
class DependencyGroup:
    group_id: str
    endpoints: list
    fixed: bool = False

    def keys(self):
        return [ep.key for ep in self.endpoints]


@dataclass
class DerivedGroup:
    group_id: str
    endpoints: list
    sources: list  # group ids whose sizes sum to this group's size

    def keys(self):
        return [ep.key for ep in self.endpoints]


@dataclass
class DependencyList:
    groups: list
    derived: list
    endpoint_group: dict = field(default_factory=dict)  # endpoint key -> group id

    def __post_init__(self):
        if not self.endpoint_group:
            for group in list(self.groups) + list(self.derived):
                for ep in group.endpoints:
                    self.endpoint_group[ep.key] = group.group_id

    def searchable(self):
        return [g for g in self.groups if not g.fixed]

    def all_groups(self):
        return list(self.groups) + list(self.derived)

    def group(self, group_id):
        for g in self.all_groups():
            if g.group_id == group_id:
                return g
        raise KeyError(f"unknown group id {group_id!r}")

    def group_of(self, endpoint):
        key = endpoint.key if isinstance(endpoint, Endpoint) else str(endpoint)
        try:
            return self.endpoint_group[key]
        except KeyError:
            raise KeyError(f"endpoint {key!r} is not in any group") from None

    def to_dict(self):
        return {
            "groups": [g.keys() for g in self.groups],
            "derived": [
                {"id": d.group_id, "endpoints": d.keys(), "sources": list(d.sources)}
                for d in self.derived
            ],
            "fixed": [g.group_id for g in self.groups if g.fixed],
            "ids": [g.group_id for g in self.groups],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def check_partition(graph, deps):
    """Every endpoint of every weighted layer appears in exactly one group."""
    seen = {}
    for group in deps.all_groups():
        for ep in group.endpoints:
            if ep.key in seen:
                raise AssertionError(
                    f"endpoint {ep.key} in both {seen[ep.key]} and {group.group_id}"
                )
            seen[ep.key] = group.group_id
    for layer in graph.weighted_layers():
        for side in (Side.IN, Side.OUT):
            key = Endpoint(layer.id, side).key
            if key not in seen:
                raise AssertionError(f"endpoint {key} missing from the partition")
    expected = 2 * len(graph.weighted_layers())
    if len(seen) != expected:
        raise AssertionError(f"partition has {len(seen)} endpoints, expected {expected}")


class _Builder:
    """Mutable group table used by the forward traversal."""

    def __init__(self):
        self.endpoint_lists = []  # creation-ordered; merged entries become None
        self.fixed_flags = []
        self.redirect = {}

    def new_group(self, fixed=False):
        self.endpoint_lists.append([])
        self.fixed_flags.append(fixed)
        return len(self.endpoint_lists) - 1

    def resolve(self, idx):
        while idx in self.redirect:
            idx = self.redirect[idx]
        return idx

    def append(self, idx, endpoint):
        self.endpoint_lists[self.resolve(idx)].append(endpoint)

    def mark_fixed(self, idx):
        self.fixed_flags[self.resolve(idx)] = True

    def merge(self, indices):
        """Merge the given groups into the lowest-indexed one."""
        live = sorted({self.resolve(i) for i in indices})
        target = live[0]
        for idx in live[1:]:
            self.endpoint_lists[target].extend(self.endpoint_lists[idx])
            self.fixed_flags[target] = self.fixed_flags[target] or self.fixed_flags[idx]
            self.endpoint_lists[idx] = None
            self.redirect[idx] = target
        return target


def _pred_tags(graph, node, tags):
    seen = []
    for pred in graph.predecessors(node.id):
        tag = tags.get(pred.id)
        if tag is None:
            raise UnsupportedTopology(
                f"node {node.id!r}: predecessor {pred.id!r} carries no channels"
            )
        seen.append(tag)
    return seen


def extract_dependencies(graph):
    """Partition all channel endpoints of `graph` into dependency groups."""
    builder = _Builder()
    derived = []  # list of dicts: endpoints, source group indices
    tags = {}  # node id -> ("g", idx) | ("d", idx)

    for node_id in graph.topo_order():
        node = graph.nodes[node_id]
        kind = node.kind

        if kind == "input":
            tags[node_id] = ("g", builder.new_group(fixed=True))

        elif kind in WEIGHTED_KINDS:
            incoming = _pred_tags(graph, node, tags)
            if len(incoming) != 1:
                raise UnsupportedTopology(
                    f"weighted node {node.id!r} must have exactly one input, "
                    f"got {len(incoming)}"
                )
            tkind, tidx = incoming[0]
            ep_in = Endpoint(node.id, Side.IN)
            if tkind == "g":
                builder.append(tidx, ep_in)
            else:
                derived[tidx]["endpoints"].append(ep_in)
            out_idx = builder.new_group()
            builder.append(out_idx, Endpoint(node.id, Side.OUT))
            tags[node_id] = ("g", out_idx)

        elif kind == "add":
            incoming = _pred_tags(graph, node, tags)
            if any(t[0] == "d" for t in incoming):
                raise UnsupportedTopology(
                    f"add node {node.id!r} consumes a concat output; its size "
                    "would be a derived sum and cannot be merged"
                )
            tags[node_id] = ("g", builder.merge([t[1] for t in incoming]))

        elif kind == "concat":
            incoming = _pred_tags(graph, node, tags)
            sources = []
            for tkind, tidx in incoming:
                if tkind == "g":
                    sources.append(("g", builder.resolve(tidx)))
                else:
                    sources.extend(derived[tidx]["sources"])
            derived.append({"endpoints": [], "sources": sources})
            tags[node_id] = ("d", len(derived) - 1)

        elif kind in PASSTHROUGH_KINDS:
            incoming = _pred_tags(graph, node, tags)
            if len(incoming) != 1:
                raise UnsupportedTopology(
                    f"passthrough node {node.id!r} must have exactly one input"
                )
            tags[node_id] = incoming[0]

        elif kind == "output":
            for tkind, tidx in _pred_tags(graph, node, tags):
                if tkind == "g":
                    builder.mark_fixed(tidx)

    # Compact live groups in creation (= first-touched topological) order.
    # Keep an endpoint-less group only if a surviving derived group sums it
    # (a concat fed straight from the data wire).
    live_derived = [e for e in derived if e["endpoints"]]
    referenced = {builder.resolve(i) for e in live_derived for _, i in e["sources"]}
    index_map = {}
    groups = []
    for idx, endpoints in enumerate(builder.endpoint_lists):
        if endpoints is None:
            continue
        if endpoints or idx in referenced:
            gid = f"g{len(groups)}"
            index_map[idx] = gid
            groups.append(DependencyGroup(gid, endpoints, builder.fixed_flags[idx]))
    derived_groups = []
    for entry in live_derived:
        gid = f"d{len(derived_groups)}"
        sources = [index_map[builder.resolve(i)] for _, i in entry["sources"]]
        derived_groups.append(DerivedGroup(gid, entry["endpoints"], sources))

    deps = DependencyList(groups, derived_groups)
    check_partition(graph, deps)
    return deps


# --- Brute-force oracle -----------------------------------------------------
#
# Independent re-derivation of the same partition: enumerate every coupling
# rule exhaustively as endpoint pairs, then union-find to fixpoint.  Exists
# solely to cross-check extract_dependencies.


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        self.add(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def _walk(graph, start_id, direction, through):
    """BFS from start (exclusive) over `through` kinds; return stop nodes."""
    step = graph.successors if direction == "fwd" else graph.predecessors
    hits, seen, frontier = [], set(), [start_id]
    while frontier:
        nid = frontier.pop(0)
        for node in step(nid):
            if node.id in seen:
                continue
            seen.add(node.id)
            if node.kind in through:
                frontier.append(node.id)
            else:
                hits.append(node)
    return hits


def oracle_dependencies(graph):
    """Exhaustive pairwise-merge union-find over the coupling rules."""
    uf = _UnionFind()
    for layer in graph.weighted_layers():
        uf.add(Endpoint(layer.id, Side.IN))
        uf.add(Endpoint(layer.id, Side.OUT))
    uf.add(DATA_WIRE)

    adds = [n for n in graph.nodes.values() if n.kind == "add"]
    concats = [n for n in graph.nodes.values() if n.kind == "concat"]
    for node in graph.nodes.values():
        if node.kind in WEIGHTED_KINDS and len(graph.predecessors(node.id)) != 1:
            raise UnsupportedTopology(f"weighted node {node.id!r} needs exactly one input")
        if node.kind in PASSTHROUGH_KINDS and len(graph.predecessors(node.id)) != 1:
            raise UnsupportedTopology(f"passthrough node {node.id!r} needs exactly one input")

    def pairs():
        # producer OUT <-> consumer IN through passthrough chains
        for layer in graph.weighted_layers():
            for hit in _walk(graph, layer.id, "fwd", PASSTHROUGH_KINDS):
                if hit.kind in WEIGHTED_KINDS:
                    yield Endpoint(layer.id, Side.OUT), Endpoint(hit.id, Side.IN)
            for hit in _walk(graph, layer.id, "bwd", PASSTHROUGH_KINDS):
                if hit.kind == "input":
                    yield Endpoint(layer.id, Side.IN), DATA_WIRE
        # element-wise adds couple every transitive producer and consumer
        through = PASSTHROUGH_KINDS | {"add"}
        for node in adds:
            members = []
            for hit in _walk(graph, node.id, "bwd", through):
                if hit.kind in WEIGHTED_KINDS:
                    members.append(Endpoint(hit.id, Side.OUT))
                elif hit.kind == "input":
                    members.append(DATA_WIRE)
                elif hit.kind == "concat":
                    raise UnsupportedTopology(
                        f"add node {node.id!r} transitively consumes concat output"
                    )
            for hit in _walk(graph, node.id, "fwd", through):
                if hit.kind in WEIGHTED_KINDS:
                    members.append(Endpoint(hit.id, Side.IN))
            for member in members[1:]:
                yield members[0], member

    # fixpoint sweep: repeat until no rule merges anything
    changed = True
    while changed:
        changed = False
        for a, b in pairs():
            changed |= uf.union(a, b)

    # output adjacency pins a class without merging distinct arrivals
    fixed_roots = {uf.find(DATA_WIRE)}
    through = PASSTHROUGH_KINDS | {"add"}
    for layer in graph.weighted_layers():
        for hit in _walk(graph, layer.id, "fwd", through):
            if hit.kind == "output":
                fixed_roots.add(uf.find(Endpoint(layer.id, Side.OUT)))

    def ep_rank(ep):
        return (graph.topo_index(ep.layer_id), 0 if ep.side is Side.IN else 1)

    # IN endpoints fed by a concat belong to that concat's derived group only
    derived_consumed = set()
    for node in concats:
        for hit in _walk(graph, node.id, "fwd", PASSTHROUGH_KINDS):
            if hit.kind in WEIGHTED_KINDS:
                derived_consumed.add(Endpoint(hit.id, Side.IN))

    classes = {}
    for layer in graph.weighted_layers():
        for side in (Side.IN, Side.OUT):
            ep = Endpoint(layer.id, side)
            if ep in derived_consumed:
                continue
            classes.setdefault(uf.find(ep), []).append(ep)

    # a concat fed straight from the data wire references an endpoint-less class
    data_root = uf.find(DATA_WIRE)
    if data_root not in classes:
        for node in concats:
            hit_data = any(
                h.kind == "input"
                for h in _walk(graph, node.id, "bwd", PASSTHROUGH_KINDS | {"add", "concat"})
            )
            has_consumers = any(
                h.kind in WEIGHTED_KINDS
                for h in _walk(graph, node.id, "fwd", PASSTHROUGH_KINDS)
            )
            if hit_data and has_consumers:
                classes[data_root] = []
                break

    ordered = sorted(
        classes.items(),
        key=lambda kv: min((ep_rank(e) for e in kv[1]), default=(-1, 0)),
    )
    groups = []
    root_gid = {}
    for root, endpoints in ordered:
        gid = f"g{len(groups)}"
        root_gid[root] = gid
        groups.append(
            DependencyGroup(gid, sorted(endpoints, key=ep_rank), root in fixed_roots)
        )

    # derived groups, one per concat node with weighted consumers
    derived_groups = []

    def concat_sources(node):
        sources = []
        for pred in graph.predecessors(node.id):
            # resolve this specific edge: walk backward through passthroughs
            chain = [pred]
            while chain[-1].kind in PASSTHROUGH_KINDS:
                chain.append(graph.predecessors(chain[-1].id)[0])
            src = chain[-1]
            if src.kind in WEIGHTED_KINDS:
                sources.append(root_gid[uf.find(Endpoint(src.id, Side.OUT))])
            elif src.kind == "add":
                member = _walk(graph, src.id, "bwd", PASSTHROUGH_KINDS | {"add"})[0]
                if member.kind == "input":
                    sources.append(root_gid[uf.find(DATA_WIRE)])
                else:
                    sources.append(root_gid[uf.find(Endpoint(member.id, Side.OUT))])
            elif src.kind == "input":
                sources.append(root_gid[uf.find(DATA_WIRE)])
            elif src.kind == "concat":
                sources.extend(concat_sources(src))
            else:
                raise UnsupportedTopology(
                    f"concat {node.id!r}: cannot resolve source {src.id!r}"
                )
        return sources

    for node in concats:
        endpoints = []
        for hit in _walk(graph, node.id, "fwd", PASSTHROUGH_KINDS):
            if hit.kind in WEIGHTED_KINDS:
                endpoints.append(Endpoint(hit.id, Side.IN))
            elif hit.kind == "add":
                raise UnsupportedTopology(
                    f"add node {hit.id!r} transitively consumes concat output"
                )
        if not endpoints:
            continue
        gid = f"d{len(derived_groups)}"
        derived_groups.append(
            DerivedGroup(gid, sorted(endpoints, key=ep_rank), concat_sources(node))
        )

    deps = DependencyList(groups, derived_groups)
    check_partition(graph, deps)
    return deps


def partition_signature(deps):
    """Canonical, order-free representation for comparing two partitions."""
    plain = frozenset(
        (frozenset(g.keys()), g.fixed) for g in deps.groups
    )
    derived = frozenset(
        (frozenset(d.keys()), tuple(sorted(d.sources))) for d in deps.derived
    )
    return plain, derived


# --- Channel size visualizer -------------------------------------------------


def group_color(index):
    hue = (index * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.92)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def sizes_from_shapes(graph, deps):
    """Derive per-group sizes from the declared weight shapes.

    Errors if two endpoints of one group disagree, which catches fixtures
    whose shapes are inconsistent with the extracted dependencies.
    """
    sizes = {}
    for layer in graph.weighted_layers():
        for side in (Side.IN, Side.OUT):
            gid = deps.group_of(Endpoint(layer.id, side))
            size = layer.weight_shape[side.axis]
            if sizes.setdefault(gid, size) != size:
                raise ValueError(
                    f"group {gid}: {layer.id}.{side.value} has size {size} but the "
                    f"group already has size {sizes[gid]}"
                )
    return sizes


def export_visualizer(graph, deps, sizes):
    """Render the dependency-colored channel map as DOT text plus a JSON dict.

    Weighted layers appear as circles (fc as a square) sized by channel
    count and split into IN/OUT halves.  Each group owns one color; every
    member after the group's first is drawn 40% more transparent
    (alpha 0.6).
    """
    colors = {}
    first_member = {}
    for idx, group in enumerate(deps.all_groups()):
        if group.group_id not in sizes:
            raise ValueError(f"no size given for group {group.group_id}")
        colors[group.group_id] = group_color(idx)
        first_member[group.group_id] = group.endpoints[0].key

    def endpoint_style(layer_id, side):
        ep = Endpoint(layer_id, side)
        gid = deps.group_of(ep)
        alpha = "ff" if first_member[gid] == ep.key else "99"
        return gid, colors[gid] + alpha

    layers = graph.weighted_layers()
    max_size = max(
        max(sizes[deps.group_of(Endpoint(l.id, s))] for s in (Side.IN, Side.OUT))
        for l in layers
    )

    lines = [
        "digraph channels {",
        "  rankdir=TB;",
        '  node [fontname="Helvetica", fontsize=9, fixedsize=true];',
    ]
    json_layers = []
    for layer in layers:
        gid_in, color_in = endpoint_style(layer.id, Side.IN)
        gid_out, color_out = endpoint_style(layer.id, Side.OUT)
        size_in, size_out = sizes[gid_in], sizes[gid_out]
        extent = 0.35 + 0.65 * ((size_in + size_out) / 2.0) / max_size
        if layer.kind == "fc":
            shape, style = "box", "striped"
        else:
            shape, style = "circle", "wedged"
        label = f"{layer.id}\\n{size_in}|{size_out}"
        lines.append(
            f'  "{layer.id}" [shape={shape}, style={style}, '
            f'fillcolor="{color_in};0.5:{color_out}", '
            f'width={extent:.3f}, height={extent:.3f}, label="{label}"];'
        )
        json_layers.append(
            {
                "id": layer.id,
                "kind": layer.kind,
                "in_group": gid_in,
                "out_group": gid_out,
                "in_size": size_in,
                "out_size": size_out,
                "in_color": color_in,
                "out_color": color_out,
            }
        )

    # contract non-weighted nodes into direct layer-to-layer edges
    nonweighted = {k for k in ("add", "concat", "pool", "other-passthrough", "input")}
    edges = []
    for layer in layers:
        seen, frontier = set(), [layer.id]
        while frontier:
            nid = frontier.pop(0)
            for node in graph.successors(nid):
                if node.id in seen:
                    continue
                seen.add(node.id)
                if node.kind in WEIGHTED_KINDS:
                    edges.append((layer.id, node.id))
                elif node.kind in nonweighted:
                    frontier.append(node.id)
    for src, dst in edges:
        lines.append(f'  "{src}" -> "{dst}";')
    lines.append("}")

    dot_text = "\n".join(lines) + "\n"
    json_doc = {
        "layers": json_layers,
        "edges": [list(e) for e in edges],
        "groups": {
            g.group_id: {
                "color": colors[g.group_id],
                "size": sizes[g.group_id],
                "fixed": getattr(g, "fixed", False),
                "derived": isinstance(g, DerivedGroup),
                "endpoints": g.keys(),
            }
            for g in deps.all_groups()
        },
    }
    return dot_text, json_doc
