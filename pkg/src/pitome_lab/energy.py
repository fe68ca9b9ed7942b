"""Per-token energy scores.

A token's energy is the mean, over its neighbors, of a margin-gated
similarity: cosines at or above the margin pass through unchanged, lower
ones are squashed to the negative ELU-like branch alpha*(exp(x - m) - 1).
High energy marks tokens sitting inside a large group of similar tokens
(merge candidates); low energy marks isolated tokens (protected).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidLayerError, ShapeMismatchError
from .token_graph import SimilarityMatrix


@dataclass(frozen=True)
class EnergyParams:
    """Margin, ELU scale, and neighbor-set convention for energy scores."""

    margin: float
    alpha: float = 1.0
    include_self: bool = False

    def __post_init__(self):
        if not -1.0 <= self.margin <= 1.0:
            raise ValueError(f"margin must be in [-1, 1], got {self.margin}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


def margin_for_layer(layer_index: int, total_layers: int) -> float:
    """Layer-scheduled margin 0.9 - 0.9 * layer_index / total_layers.

    The margin shrinks linearly from 0.9 at the first block to 0.0 at the
    last, reflecting token spaces growing sparser with depth.
    """
    if total_layers < 1:
        raise InvalidLayerError(f"total_layers must be >= 1, got {total_layers}")
    if layer_index < 0 or layer_index > total_layers:
        raise InvalidLayerError(
            f"layer_index must be in [0, {total_layers}], got {layer_index}"
        )
    return 0.9 - 0.9 * layer_index / total_layers


def margin_gate(x: float, params: EnergyParams) -> float:
    """The two-branch gate: x if x >= margin, else alpha*(exp(x - m) - 1).

    Implemented literally, including the jump at x == margin (the boundary
    belongs to the pass-through branch).  Input is clamped to [-1, 1].
    """
    x = min(1.0, max(-1.0, float(x)))
    if x >= params.margin:
        return x
    return params.alpha * (np.exp(x - params.margin) - 1.0)


def _gate_matrix(sim: np.ndarray, params: EnergyParams) -> np.ndarray:
    clipped = np.clip(sim, -1.0, 1.0)
    return np.where(
        clipped >= params.margin,
        clipped,
        params.alpha * (np.exp(clipped - params.margin) - 1.0),
    )


def energy_scores(sim: SimilarityMatrix, params: EnergyParams) -> np.ndarray:
    """Energy of every token: (1/N) * sum of gated similarities to neighbors.

    The neighbor set excludes the token itself unless
    ``params.include_self`` is set; including self only shifts every score
    by the constant gate(1)/N, so the ranking is unchanged either way.
    The 1/N normalization uses the current token count.

    With ``include_self=False`` every score lies in
    ``[-alpha*(1 - exp(-1 - m))*(N-1)/N, (N-1)/N]``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ShapeMismatchError(f"similarity matrix must be square, got {sim.shape}")
    n = sim.shape[0]
    gated = _gate_matrix(sim, params)
    if not params.include_self:
        np.fill_diagonal(gated, 0.0)
    return gated.sum(axis=1) / n
