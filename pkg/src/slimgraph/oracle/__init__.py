"""Loss oracles: the built-in reference engine and the external protocol.

An oracle is bound to one graph at a time via ``bind`` and then answers
mask evaluations. The pruning loop rebinds whenever the graph is
rewritten, so oracle implementations can cache per-graph state (or ship
the model to another process once per rebuild).
"""

from __future__ import annotations

from ..graph.groups import ChannelGroup
from ..graph.model import ModelGraph
from .data import (
    DROP_METRICS,
    EvalDataset,
    LossDelta,
    TaskLossVector,
    TaskSpec,
    evaluate_losses,
    load_dataset_file,
    make_toy_dataset,
    per_sample_losses,
    perf_drop,
    relative_change,
)
from .engine import forward
from .protocol import ExternalOracle, run_protocol_conformance


class BuiltinOracle:
    """Mask evaluation through the reference numpy engine."""

    def __init__(self, data: EvalDataset):
        self.data = data
        self._graph: ModelGraph | None = None
        self._groups: list[ChannelGroup] | None = None

    def bind(self, g: ModelGraph, groups: list[ChannelGroup]) -> None:
        self._graph = g
        self._groups = groups

    def evaluate(self, mask: frozenset[int] | set[int]) -> TaskLossVector:
        if self._graph is None:
            raise RuntimeError("oracle not bound to a graph")
        return evaluate_losses(self._graph, self.data, mask=mask, groups=self._groups)

    def close(self) -> None:
        pass


__all__ = [
    "BuiltinOracle",
    "DROP_METRICS",
    "EvalDataset",
    "ExternalOracle",
    "LossDelta",
    "TaskLossVector",
    "TaskSpec",
    "evaluate_losses",
    "forward",
    "load_dataset_file",
    "make_toy_dataset",
    "per_sample_losses",
    "perf_drop",
    "relative_change",
    "run_protocol_conformance",
]
