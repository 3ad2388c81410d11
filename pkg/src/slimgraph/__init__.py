"""Dependency-aware structural channel pruning over serialized CNN graphs.

The package turns a serialized model into a channel-dependency graph,
scores coupled channel groups by a joint-saliency criterion, schedules
per-layer loss budgets from a single global constraint, and greedily
prunes layer by layer under those budgets, emitting a rewritten model
plus a machine-readable plan of every decision taken.
"""

from .errors import (
    ConfigError,
    EvaluatorTimeoutError,
    GraphValidationError,
    GroupingError,
    InfeasibleThresholdError,
    ModelFormatError,
    NonConvergenceError,
    OracleError,
    ProtocolError,
    PruneRequestError,
    PruningAborted,
    ShapeInferenceError,
    SlimGraphError,
    UnsupportedOpError,
)
from .graph import (
    ChannelGroup,
    CostReport,
    ModelGraph,
    Node,
    PruneUnit,
    TensorSpec,
    apply_pruning,
    build_channel_groups,
    build_graph,
    build_toy_model,
    count_cost,
    export_model,
    export_model_file,
    graphs_equal,
    group_units,
    load_model,
    load_model_file,
    mask_points,
    model_hash,
    prunable_units,
)
from .oracle import (
    BuiltinOracle,
    EvalDataset,
    ExternalOracle,
    TaskLossVector,
    TaskSpec,
    evaluate_losses,
    forward,
    make_toy_dataset,
    perf_drop,
    relative_change,
)
from .pruner import (
    PrunerConfig,
    PruningPlan,
    detect_sensitive_task,
    filter_top_p,
    prune_layer_greedy,
    run_pruning,
)
from .saliency import (
    SaliencyTable,
    check_probability_bound,
    check_subadditivity,
    conditional_saliency,
    filter_l1_saliency,
    make_probe,
)
from .scheduler import LayerOrder, ThresholdSchedule, rank_layers, sequence_matrix, solve_lambda

__version__ = "0.1.0"

__all__ = [
    "BuiltinOracle",
    "ChannelGroup",
    "ConfigError",
    "CostReport",
    "EvalDataset",
    "EvaluatorTimeoutError",
    "ExternalOracle",
    "GraphValidationError",
    "GroupingError",
    "InfeasibleThresholdError",
    "LayerOrder",
    "ModelFormatError",
    "ModelGraph",
    "Node",
    "NonConvergenceError",
    "OracleError",
    "ProtocolError",
    "PruneRequestError",
    "PrunerConfig",
    "PruneUnit",
    "PruningAborted",
    "PruningPlan",
    "SaliencyTable",
    "ShapeInferenceError",
    "SlimGraphError",
    "TaskLossVector",
    "TaskSpec",
    "TensorSpec",
    "UnsupportedOpError",
    "apply_pruning",
    "build_channel_groups",
    "build_graph",
    "build_toy_model",
    "check_probability_bound",
    "check_subadditivity",
    "conditional_saliency",
    "count_cost",
    "detect_sensitive_task",
    "evaluate_losses",
    "filter_top_p",
    "export_model",
    "export_model_file",
    "filter_l1_saliency",
    "forward",
    "graphs_equal",
    "group_units",
    "load_model",
    "load_model_file",
    "make_probe",
    "make_toy_dataset",
    "mask_points",
    "model_hash",
    "perf_drop",
    "prunable_units",
    "prune_layer_greedy",
    "rank_layers",
    "relative_change",
    "run_pruning",
    "sequence_matrix",
    "solve_lambda",
    "__version__",
]
