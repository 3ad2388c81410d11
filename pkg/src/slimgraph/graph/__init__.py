"""Graph loading, validation, channel analysis, cost accounting, rewriting."""

from .cost import CostReport, cost_metric, count_cost
from .groups import (
    ChannelGroup,
    PruneUnit,
    Slot,
    build_channel_groups,
    group_units,
    mask_points,
    prunable_units,
    remaining_per_producer,
)
from .model import (
    ModelGraph,
    Node,
    TensorSpec,
    build_graph,
    graphs_equal,
    total_parameters,
)
from .onnx_io import (
    export_model,
    export_model_file,
    load_model,
    load_model_file,
    model_hash,
)
from .rewrite import apply_pruning
from .toy import TOY_ARCHS, build_toy_model, head_node_ids

__all__ = [
    "CostReport",
    "ChannelGroup",
    "ModelGraph",
    "Node",
    "PruneUnit",
    "Slot",
    "TensorSpec",
    "TOY_ARCHS",
    "apply_pruning",
    "build_channel_groups",
    "build_graph",
    "build_toy_model",
    "cost_metric",
    "count_cost",
    "export_model",
    "export_model_file",
    "graphs_equal",
    "group_units",
    "head_node_ids",
    "load_model",
    "load_model_file",
    "mask_points",
    "model_hash",
    "prunable_units",
    "remaining_per_producer",
    "total_parameters",
]
