"""Channel dependency extraction on the shipped fixtures.

Resizing one layer's output channels forces every consumer's input channels
to follow, and element-wise adds (residual skips) tie whole bundles of
layers together.  The extractor partitions all (layer, in|out) endpoints
into groups that must be resized jointly; concat consumers become *derived*
groups whose size is always the sum of their sources.
"""

from chansearch import extract_dependencies, oracle_dependencies
from chansearch.dependency import partition_signature, sizes_from_shapes
from chansearch.fixtures import fixture_graph

for name in ("fig3_mini", "resnet34", "darts7"):
    graph = fixture_graph(name)
    deps = extract_dependencies(graph)
    searchable = deps.searchable()
    print(f"== {name}: {len(graph.weighted_layers())} weighted layers")
    print(f"   {len(deps.groups)} groups ({len(searchable)} searchable, "
          f"{len(deps.groups) - len(searchable)} pinned to data/classes), "
          f"{len(deps.derived)} derived")
    agree = partition_signature(deps) == partition_signature(oracle_dependencies(graph))
    print(f"   union-find oracle agrees: {agree}")

# the fig3 pattern in full: one residual skip merges four endpoints
graph = fixture_graph("fig3_mini")
deps = extract_dependencies(graph)
print("\nfig3_mini groups:")
for group in deps.groups:
    tag = " [fixed]" if group.fixed else ""
    print(f"  {group.group_id}{tag}: {', '.join(group.keys())}")

print("\nper-group sizes read off the declared weight shapes:")
print(" ", sizes_from_shapes(graph, deps))
