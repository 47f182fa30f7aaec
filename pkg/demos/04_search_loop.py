"""A full desk-scale search on the darts7 fixture with the built-in trainer.

Each trial scores every searchable group, turns the momentum delta into a
clipped size step, distills the weights to the new shapes and trains two
quick epochs on the procedural two-class dataset.  Greedy follows the score;
simulated annealing adds decaying stochastic kicks to escape local optima.
"""

import time

from chansearch import SearchConfig, ToyTrainer, extract_dependencies, run_search
from chansearch.fixtures import fixture_graph

graph = fixture_graph("darts7")
deps = extract_dependencies(graph)

for algorithm in ("greedy", "sa"):
    config = SearchConfig(
        algorithm=algorithm, trials=5, epochs=1, gamma=0.0, alpha=5.0, seed=7,
        init_size=16,
    )
    start = time.time()
    result, weights = run_search(graph, None, deps, config, ToyTrainer(graph))
    elapsed = time.time() - start

    print(f"== {algorithm} ({elapsed:.1f}s)")
    print("   trial  loss    acc    cumulative-QC")
    for record in result.trials:
        print(f"   {record['trial']:>5}  {record['train_loss']:.4f}  "
              f"{record['train_acc']:.3f}  {record['cumulative']:.4f}")
    sample = deps.searchable()[1].group_id
    sizes = [r["sizes"][sample] for r in result.trials]
    print(f"   group {sample} size per trial: {sizes}")
    best = {gid: result.best_plan[gid] for gid in sorted(result.best_plan)}
    print(f"   best plan: {best}")
    print()
