"""Exception hierarchy for the pruning engine.

Every error raised on a malformed model or a bad request carries enough
context (node id, tensor name, group id) to locate the offender without
re-running under a debugger.
"""


class SlimGraphError(Exception):
    """Base class for all engine errors."""


class ModelFormatError(SlimGraphError):
    """Raised when model bytes cannot be decoded as the supported subset."""


class UnsupportedOpError(ModelFormatError):
    """Raised when a graph contains an operator outside the supported set."""

    def __init__(self, node_id: str, op: str):
        self.node_id = node_id
        self.op = op
        super().__init__(f"node {node_id!r}: unsupported operator {op!r}")


class GraphValidationError(SlimGraphError):
    """Raised when a decoded graph violates a structural invariant."""


class ShapeInferenceError(GraphValidationError):
    """Raised when a tensor shape cannot be derived or is inconsistent."""


class GroupingError(SlimGraphError):
    """Raised when channel dependency analysis hits an unresolvable case."""


class PruneRequestError(SlimGraphError):
    """Raised when a requested prune set is illegal (pinned group, floor)."""


class InfeasibleThresholdError(SlimGraphError):
    """Raised when no growth factor can satisfy the budget decomposition."""


class NonConvergenceError(SlimGraphError):
    """Raised when the threshold solver fails to reach tolerance."""


class OracleError(SlimGraphError):
    """Raised when a loss oracle fails to produce a usable evaluation."""


class ProtocolError(OracleError):
    """Raised on a malformed or out-of-contract evaluator message."""


class EvaluatorTimeoutError(OracleError):
    """Raised when an external evaluator misses the response deadline."""


class PruningAborted(SlimGraphError):
    """Raised when a run stops mid-flight; carries the last checkpoint path."""

    def __init__(self, message: str, checkpoint: str | None = None):
        self.checkpoint = checkpoint
        if checkpoint:
            message = f"{message} (checkpoint written to {checkpoint})"
        super().__init__(message)


class ConfigError(SlimGraphError):
    """Raised on an invalid or unknown run-configuration value."""
