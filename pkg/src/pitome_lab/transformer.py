"""Minimal transformer block with in-block token merging and FLOPs accounting.

The block is deliberately stripped to what the merging math touches:
single-head attention with the proportional (log-size) key bias, a merge
between attention and MLP, and a two-layer ReLU MLP, both with residual
connections.  No layer norm, no multi-head, no training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyParams, margin_for_layer
from .errors import ScheduleExhaustedError, ShapeMismatchError
from .merge import (
    TokenSizes,
    apply_merge,
    as_token_sizes,
    merge_count,
    plan_pitome,
    plan_pitome_k,
    plan_tome,
    proportional_attention_bias,
)
from .rng import SplitMix64, derive_seed
from .token_graph import TokenMatrix, as_token_matrix

MODE_RATIO = "ratio"
MODE_FIXED_K = "fixed_k"

ALGO_PITOME = "pitome"
ALGO_TOME = "tome"
ALGO_NONE = "none"


@dataclass(frozen=True)
class BlockWeights:
    """Projection and MLP weights for one block (hidden width h, MLP 4h)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_mlp_in: np.ndarray
    w_mlp_out: np.ndarray

    def __post_init__(self):
        h = self.w_q.shape[0]
        shapes = {
            "w_q": (h, h),
            "w_k": (h, h),
            "w_v": (h, h),
            "w_mlp_in": (h, 4 * h),
            "w_mlp_out": (4 * h, h),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise ShapeMismatchError(f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatchError(f"{name} contains non-finite entries")

    @property
    def hidden_dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def random(cls, h: int, seed: int) -> "BlockWeights":
        """Standard-normal weights scaled by 1/sqrt(h), fixed seed."""
        gen = SplitMix64(derive_seed(seed, h))
        scale = 1.0 / np.sqrt(h)
        return cls(
            w_q=gen.gaussian_matrix(h, h) * scale,
            w_k=gen.gaussian_matrix(h, h) * scale,
            w_v=gen.gaussian_matrix(h, h) * scale,
            w_mlp_in=gen.gaussian_matrix(h, 4 * h) * scale,
            w_mlp_out=gen.gaussian_matrix(4 * h, h) * scale,
        )


@dataclass(frozen=True)
class ScheduleSpec:
    """Token-reduction schedule: keep-ratio r per layer, or fixed k removed.

    ``floor_tokens`` optionally stops a fixed-k schedule from shrinking
    below a target count (removals in a layer are trimmed to the floor),
    which is how a fixed-k schedule is matched to a ratio schedule's final
    count for comparisons.
    """

    mode: str
    layers: int
    r: float = 1.0
    k_per_layer: int = 0
    floor_tokens: int | None = None

    def __post_init__(self):
        if self.mode not in (MODE_RATIO, MODE_FIXED_K):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.mode == MODE_RATIO and not 0.0 < self.r <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.r}")
        if self.mode == MODE_FIXED_K and self.k_per_layer < 0:
            raise ValueError(f"k_per_layer must be >= 0, got {self.k_per_layer}")
        if self.floor_tokens is not None and self.floor_tokens < 1:
            raise ValueError("floor_tokens must be >= 1 when given")


@dataclass(frozen=True)
class FlopsReport:
    """Exact integer FLOPs per layer and in total.

    per_layer rows: (tokens_in, tokens_out, attention_flops, mlp_flops,
    merge_flops).  Conventions: one multiply-accumulate = 2 flops;
    attention = 2*n^2*h (logits) + 4*n*h^2 (Q, K projections on n=tokens_in)
    ... plus V, and the MLP runs on tokens_out; merging pays 2*n^2*h for
    its similarity matrix only when the layer actually merges.
    """

    per_layer: tuple[tuple[int, int, int, int, int], ...]
    total: int

    def token_counts(self) -> list[int]:
        return [row[0] for row in self.per_layer]

    @property
    def final_tokens(self) -> int:
        return self.per_layer[-1][1]

    def to_csv(self) -> str:
        lines = ["layer,tokens_in,tokens_out,attn_flops,mlp_flops,merge_flops"]
        for i, (tin, tout, attn, mlp, mrg) in enumerate(self.per_layer):
            lines.append(f"{i},{tin},{tout},{attn},{mlp},{mrg}")
        return "\n".join(lines) + "\n"


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def attention_block(X, w: BlockWeights, sizes) -> TokenMatrix:
    """Single-head attention with proportional key bias and residual add."""
    x = as_token_matrix(X)
    h = w.hidden_dim
    if x.shape[1] != h:
        raise ShapeMismatchError(
            f"tokens have {x.shape[1]} dims but weights expect {h}"
        )
    m = as_token_sizes(sizes, x.shape[0])
    q = x @ w.w_q
    k = x @ w.w_k
    v = x @ w.w_v
    logits = (q @ k.T) / np.sqrt(h) + proportional_attention_bias(m)[None, :]
    return x + _softmax_rows(logits) @ v


def _mlp(x: np.ndarray, w: BlockWeights) -> np.ndarray:
    hidden = np.maximum(x @ w.w_mlp_in, 0.0)
    return x + hidden @ w.w_mlp_out


def _layer_k(n: int, schedule: ScheduleSpec) -> int:
    if schedule.mode == MODE_RATIO:
        return merge_count(n, schedule.r)
    k = schedule.k_per_layer
    if schedule.floor_tokens is not None:
        k = min(k, max(0, n - schedule.floor_tokens))
    return k


def forward_block_with_merge(
    X,
    sizes,
    w: BlockWeights,
    layer_index: int,
    total_layers: int,
    algo: str = ALGO_PITOME,
    schedule: ScheduleSpec | None = None,
    *,
    alpha: float = 1.0,
    protect_first: bool = False,
) -> tuple[TokenMatrix, TokenSizes]:
    """One transformer block: attention, merge, MLP.

    Merging is planned on the key projections of the block *input* (the
    features used for matching) and applied to the attention output (the
    features being merged), then the MLP runs on the reduced tokens.
    Sizes never gate the MLP.
    """
    if algo not in (ALGO_PITOME, ALGO_TOME, ALGO_NONE):
        raise ValueError(f"unknown algorithm {algo!r}")
    x = as_token_matrix(X)
    m = as_token_sizes(sizes, x.shape[0])
    attended = attention_block(x, w, m)
    if algo == ALGO_NONE:
        return _mlp(attended, w), m

    sched = schedule if schedule is not None else ScheduleSpec(MODE_RATIO, 1, r=1.0)
    n = x.shape[0]
    k = _layer_k(n, sched)
    match_feats = x @ w.w_k
    margin = margin_for_layer(layer_index, total_layers)
    if algo == ALGO_PITOME:
        params = EnergyParams(margin=margin, alpha=alpha)
        if sched.mode == MODE_RATIO:
            plan = plan_pitome(match_feats, params, sched.r, protect_first=protect_first)
        else:
            plan = plan_pitome_k(match_feats, params, k, protect_first=protect_first)
    else:
        plan = plan_tome(match_feats, min(k, n // 2), protect_first=protect_first)
    merged, new_sizes = apply_merge(plan, attended, m)
    return _mlp(merged, w), new_sizes


def schedule_token_counts(n0: int, schedule: ScheduleSpec) -> list[int]:
    """Token count entering each layer, plus the final count (length L+1)."""
    if n0 < 1:
        raise ScheduleExhaustedError(f"n0 must be >= 1, got {n0}")
    counts = [n0]
    n = n0
    for _ in range(schedule.layers):
        k = _layer_k(n, schedule)
        n = n - k
        if n < 1:
            raise ScheduleExhaustedError(
                f"schedule drives token count to {n} (< 1) before the last layer"
            )
        counts.append(n)
    return counts


def flops_estimate(n0: int, h: int, schedule: ScheduleSpec) -> FlopsReport:
    """Exact integer FLOPs for a full forward pass under a schedule.

    Per layer with n tokens in and n' out: attention costs
    2*n^2*h + 4*n*h^2, the MLP costs 16*n'*h^2, and a merging layer pays
    2*n^2*h for its similarity matrix (zero when no tokens are removed).
    """
    if h < 1:
        raise ShapeMismatchError(f"hidden dim must be >= 1, got {h}")
    counts = schedule_token_counts(n0, schedule)
    rows = []
    total = 0
    for i in range(schedule.layers):
        tin, tout = counts[i], counts[i + 1]
        attn = 2 * tin * tin * h + 4 * tin * h * h
        mlp = 16 * tout * h * h
        mrg = 2 * tin * tin * h if tout < tin else 0
        rows.append((tin, tout, attn, mlp, mrg))
        total += attn + mlp + mrg
    return FlopsReport(per_layer=tuple(rows), total=total)
