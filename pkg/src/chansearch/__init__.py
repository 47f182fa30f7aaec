"""Channel-size search engine for convolutional architecture graphs.

Pipeline: parse a computation graph, extract channel dependency groups,
score layers with the spectral quality metric, search group sizes with a
greedy or simulated-annealing schedule, and carry trained weights across
size changes by reflection expansion / spectral shrinkage.
"""

__version__ = "0.1.0"

from .dependency import (
    DependencyList,
    export_visualizer,
    extract_dependencies,
    oracle_dependencies,
    sizes_from_shapes,
)
from .distill import ResizePlan, expand, shrink, transfer
from .graph import ComputationGraph, Endpoint, GraphError, LayerNode, Side, load_graph, parse_graph
from .metric import (
    GroupMetricState,
    SpectralSummary,
    cumulative_metric,
    effective_rank,
    group_momentum,
    layer_metric,
    qc_value,
    svd,
)
from .search import (
    SearchConfig,
    SearchResult,
    accept,
    apply_scale,
    compound_baseline,
    initial_sizes,
    random_baseline,
    run_search,
    scale_factor,
    temperature,
)
from .tensorio import FormatError, WeightTensor, read_weights, refold, unfold, write_weights
from .trainer import ExternalTrainer, MockTrainer, ToyTrainer, TrainerError, make_dataset

__all__ = [
    "ComputationGraph",
    "DependencyList",
    "Endpoint",
    "ExternalTrainer",
    "FormatError",
    "GraphError",
    "GroupMetricState",
    "LayerNode",
    "MockTrainer",
    "ResizePlan",
    "SearchConfig",
    "SearchResult",
    "Side",
    "SpectralSummary",
    "ToyTrainer",
    "TrainerError",
    "WeightTensor",
    "accept",
    "apply_scale",
    "compound_baseline",
    "cumulative_metric",
    "effective_rank",
    "expand",
    "export_visualizer",
    "extract_dependencies",
    "group_momentum",
    "initial_sizes",
    "layer_metric",
    "load_graph",
    "make_dataset",
    "oracle_dependencies",
    "parse_graph",
    "qc_value",
    "random_baseline",
    "read_weights",
    "refold",
    "run_search",
    "scale_factor",
    "shrink",
    "sizes_from_shapes",
    "svd",
    "temperature",
    "transfer",
    "unfold",
    "write_weights",
]
