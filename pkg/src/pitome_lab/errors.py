"""Exception hierarchy for pitome_lab."""


class PitomeLabError(Exception):
    """Base class for all library errors."""


class ZeroVectorError(PitomeLabError):
    """A token row has zero norm, so its cosine similarity is undefined."""

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class InvalidLayerError(PitomeLabError):
    """Layer index outside [0, total_layers], or total_layers == 0."""


class InvalidKError(PitomeLabError):
    """Requested merge count k violates 2k <= N."""


class ShapeMismatchError(PitomeLabError):
    """Array shapes are inconsistent with the plan or weights."""


class NonPositiveSizeError(PitomeLabError):
    """Token sizes must be strictly positive."""


class BadPartitionError(PitomeLabError):
    """Partition is not a disjoint cover of the node set."""


class BadIndexError(PitomeLabError):
    """Node index out of range or a degenerate index pair."""


class NoConvergenceError(PitomeLabError):
    """Jacobi eigensolver failed to converge within the sweep budget."""


class ScheduleExhaustedError(PitomeLabError):
    """A fixed-k merging schedule drove the token count below one."""


class AssumptionUnsatisfiableError(PitomeLabError):
    """Synthetic data generation could not satisfy the cluster-margin
    assumption within the retry budget (concentration too low for the
    requested margin)."""
