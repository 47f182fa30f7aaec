"""Export the channel-size visualizer for the ResNet34 fixture.

Every weighted layer becomes a circle (the classifier a square) split into
input/output halves, sized by channel count and colored by dependency group;
group members after the first are drawn 40% more transparent.  Render the
DOT file with graphviz if available: `dot -Tsvg resnet34.dot -o resnet34.svg`.
"""

import json
from pathlib import Path

from chansearch import export_visualizer, extract_dependencies
from chansearch.dependency import sizes_from_shapes
from chansearch.fixtures import fixture_graph

graph = fixture_graph("resnet34")
deps = extract_dependencies(graph)
sizes = sizes_from_shapes(graph, deps)

dot_text, doc = export_visualizer(graph, deps, sizes)
out = Path("resnet34.dot")
out.write_text(dot_text)
Path("resnet34_channels.json").write_text(json.dumps(doc, indent=2))

print(f"wrote {out} ({len(dot_text.splitlines())} lines) and resnet34_channels.json")
print(f"{len(doc['layers'])} layers, {len(doc['groups'])} groups")
print("\nstage spine sizes (one group per residual stage):")
for gid, info in doc["groups"].items():
    if len(info["endpoints"]) > 4:
        print(f"  {gid}: size {info['size']:>3}, {len(info['endpoints'])} endpoints")
