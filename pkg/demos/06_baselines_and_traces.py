"""Comparison baselines and trace export.

Random scaling draws one Uniform[0.5, 2] multiplier per searchable group;
compound scaling applies one shared width multiplier everywhere.  Both
produce plans through the same dependency bookkeeping as the real search,
so derived (concat) groups stay consistent automatically.
"""

from chansearch import (
    SearchConfig,
    compound_baseline,
    extract_dependencies,
    initial_sizes,
    random_baseline,
)
from chansearch.fixtures import fixture_graph

graph = fixture_graph("darts7")
deps = extract_dependencies(graph)
config = SearchConfig(algorithm="random", seed=42, init_size=16)
base = initial_sizes(graph, deps, config.init_size)

print("searchable groups and their plans:")
print(f"{'group':>6} {'init':>5} {'random':>7} {'x0.75':>6} {'x1.5':>5}")
random_plan = random_baseline(deps, base, config)
per_75 = compound_baseline(deps, base, 0.75)
per_150 = compound_baseline(deps, base, 1.5)
for group in deps.searchable():
    gid = group.group_id
    print(f"{gid:>6} {base[gid]:>5} {random_plan[gid]:>7} "
          f"{per_75[gid]:>6} {per_150[gid]:>5}")

print("\nderived (concat) groups always sum their sources:")
for derived in deps.derived[:3]:
    sources = " + ".join(f"{s}={random_plan[s]}" for s in derived.sources)
    print(f"  {derived.group_id} = {sources} -> {random_plan[derived.group_id]}")

rerun = random_baseline(deps, base, config)
print(f"\nsame seed reproduces the random plan exactly: {rerun == random_plan}")
