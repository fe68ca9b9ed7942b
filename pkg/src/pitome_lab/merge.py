"""Merge planning and application.

Two planners share one plan format:

* ``plan_pitome`` ranks tokens by energy, keeps the low-energy tail
  protected, splits the high-energy head into sets A and B by rank parity,
  and pairs every A token with its most similar B token.
* ``plan_tome`` is the bipartite-soft-matching baseline: sets are fixed by
  original index parity (A pool = even, B = odd) and the k pool members
  with the highest best-match similarity merge into B.

A plan is immutable and value-free: applying it to any matrix of matching
height performs the size-weighted scatter-and-average, so one planning
pass can merge hidden states, sizes, or bookkeeping arrays alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyParams, energy_scores
from .errors import (
    InvalidKError,
    NonPositiveSizeError,
    ShapeMismatchError,
)
from .token_graph import (
    TokenMatrix,
    as_token_matrix,
    cosine_similarity,
    pairwise_cosine,
)

ORDER_PROTECTED_THEN_B = "protected_then_b"
ORDER_ORIGINAL = "original"

# TokenSizes: 1-D positive vector, entry i = number of original patches
# token i represents.
TokenSizes = np.ndarray


def ones_sizes(n: int) -> TokenSizes:
    return np.ones(n, dtype=np.float64)


def as_token_sizes(sizes, n: int | None = None) -> TokenSizes:
    arr = np.asarray(sizes, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"sizes must be a vector, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ShapeMismatchError(f"expected {n} sizes, got {arr.shape[0]}")
    if np.any(arr < 1.0):
        raise NonPositiveSizeError("token sizes must be >= 1")
    return arr


@dataclass(frozen=True)
class MergePlan:
    """Disjoint split of [N] into protected / set A / set B plus A->B map.

    ``dest_in_b[p]`` is the position in ``set_b`` that ``set_a[p]`` merges
    into.  For energy-based plans |set_a| == |set_b| == k; the baseline
    keeps its whole odd-index half as B, so there |set_b| >= k.
    """

    protected: tuple[int, ...]
    set_a: tuple[int, ...]
    set_b: tuple[int, ...]
    dest_in_b: tuple[int, ...]
    k: int
    order: str = ORDER_PROTECTED_THEN_B
    n_tokens: int = field(default=0)

    def __post_init__(self):
        n = len(self.protected) + len(self.set_a) + len(self.set_b)
        if self.n_tokens == 0:
            object.__setattr__(self, "n_tokens", n)
        if self.n_tokens != n:
            raise ShapeMismatchError(
                f"plan covers {n} indices but claims {self.n_tokens} tokens"
            )
        everything = self.protected + self.set_a + self.set_b
        if sorted(everything) != list(range(n)):
            raise ShapeMismatchError(
                "protected, set_a, set_b must disjointly cover 0..N-1"
            )
        if len(self.set_a) != self.k or len(self.dest_in_b) != self.k:
            raise ShapeMismatchError("|set_a| and |dest_in_b| must equal k")
        if self.k > 0 and not self.set_b:
            raise ShapeMismatchError("merges planned but set_b is empty")
        if any(not 0 <= d < len(self.set_b) for d in self.dest_in_b):
            raise ShapeMismatchError("dest_in_b entries must index set_b")
        if self.order not in (ORDER_PROTECTED_THEN_B, ORDER_ORIGINAL):
            raise ShapeMismatchError(f"unknown output order {self.order!r}")

    @property
    def n_output_tokens(self) -> int:
        return self.n_tokens - self.k

    def output_groups(self) -> list[list[int]]:
        """Original indices backing each output row, in output order."""
        groups = [[i] for i in self.protected]
        b_groups = [[b] for b in self.set_b]
        for a, d in zip(self.set_a, self.dest_in_b):
            b_groups[d].append(a)
        groups.extend(b_groups)
        if self.order == ORDER_ORIGINAL:
            groups.sort(key=min)
        return groups

    def to_json(self) -> str:
        return json.dumps(
            {
                "protected": list(self.protected),
                "set_a": list(self.set_a),
                "set_b": list(self.set_b),
                "dest_in_b": list(self.dest_in_b),
                "k": self.k,
                "order": self.order,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MergePlan":
        obj = json.loads(text)
        return cls(
            protected=tuple(obj["protected"]),
            set_a=tuple(obj["set_a"]),
            set_b=tuple(obj["set_b"]),
            dest_in_b=tuple(obj["dest_in_b"]),
            k=int(obj["k"]),
            order=obj.get("order", ORDER_PROTECTED_THEN_B),
        )


def merge_count(n: int, r: float) -> int:
    """Number of merges for keep-ratio r: floor(n - n*r), clamped to 2k <= n.

    The tiny epsilon keeps floor() aligned with exact rational arithmetic
    when n*r picks up float rounding (e.g. 10*0.7 = 6.999...).
    """
    if n < 1:
        raise InvalidKError(f"token count must be >= 1, got {n}")
    if not 0.0 < r <= 1.0:
        raise InvalidKError(f"keep ratio must be in (0, 1], got {r}")
    k = int(math.floor(n - n * r + 1e-9))
    return max(0, min(k, n // 2))


def _stable_desc_order(values: np.ndarray) -> np.ndarray:
    # stable argsort descending: ties resolve to the lowest index
    return np.argsort(-values, kind="stable")


def plan_pitome(
    match_features,
    params: EnergyParams,
    r: float,
    *,
    protect_first: bool = False,
    order: str = ORDER_PROTECTED_THEN_B,
) -> MergePlan:
    """Energy-based merge plan for keep-ratio r.

    Tokens are sorted by energy (descending, stable); the top 2k form the
    mergeable pool, split into A (odd ranks) and B (even ranks); each A
    token is paired with its most similar B token; everything else is
    protected.  ``protect_first`` pins token 0 (a CLS-like token) into the
    protected set regardless of its energy.
    """
    feats = as_token_matrix(match_features)
    n = feats.shape[0]
    sim = pairwise_cosine(feats)
    energies = energy_scores(sim, params)
    k = merge_count(n, r)
    return _plan_pitome_with_k(
        sim, energies, k, protect_first=protect_first, order=order
    )


def plan_pitome_k(
    match_features,
    params: EnergyParams,
    k: int,
    *,
    protect_first: bool = False,
    order: str = ORDER_PROTECTED_THEN_B,
) -> MergePlan:
    """Energy-based plan merging exactly k pairs (fixed-k schedules)."""
    feats = as_token_matrix(match_features)
    n = feats.shape[0]
    if k < 0 or 2 * k > n:
        raise InvalidKError(f"need 0 <= 2k <= N, got k={k}, N={n}")
    sim = pairwise_cosine(feats)
    energies = energy_scores(sim, params)
    return _plan_pitome_with_k(
        sim, energies, k, protect_first=protect_first, order=order
    )


def _plan_pitome_with_k(
    sim: np.ndarray,
    energies: np.ndarray,
    k: int,
    *,
    protect_first: bool,
    order: str,
) -> MergePlan:
    n = sim.shape[0]
    ranked = _stable_desc_order(energies)
    pinned: list[int] = []
    if protect_first:
        pinned = [0]
        ranked = ranked[ranked != 0]
        k = min(k, len(ranked) // 2)
    mergeable = ranked[: 2 * k]
    protected = pinned + list(ranked[2 * k:])
    set_a = mergeable[0::2]
    set_b = mergeable[1::2]
    if k > 0:
        scores = sim[np.ix_(set_a, set_b)]
        dest = np.argmax(scores, axis=1)  # first max: lowest B position
    else:
        dest = np.empty(0, dtype=int)
    return MergePlan(
        protected=tuple(int(i) for i in protected),
        set_a=tuple(int(i) for i in set_a),
        set_b=tuple(int(i) for i in set_b),
        dest_in_b=tuple(int(d) for d in dest),
        k=k,
        order=order,
    )


def plan_tome(
    match_features,
    k: int,
    *,
    protect_first: bool = False,
    order: str = ORDER_PROTECTED_THEN_B,
) -> MergePlan:
    """Bipartite-soft-matching baseline plan.

    The candidate pool is the even original indices and B is the odd ones;
    pool members are ranked by their best similarity into B and the top k
    merge into their argmax destination.  The split ignores token content
    entirely, which is exactly the failure mode the energy-based planner
    avoids: a token's true duplicate may sit on the same side.
    """
    feats = as_token_matrix(match_features)
    n = feats.shape[0]
    if k < 0 or 2 * k > n:
        raise InvalidKError(f"need 0 <= 2k <= N, got k={k}, N={n}")
    pool = list(range(0, n, 2))
    set_b = list(range(1, n, 2))
    if protect_first and pool and pool[0] == 0:
        pool = pool[1:]
        k = min(k, len(pool))
    pinned = [0] if protect_first else []
    if k == 0 or not set_b:
        return MergePlan(
            protected=tuple(pinned + pool),
            set_a=(),
            set_b=tuple(set_b),
            dest_in_b=(),
            k=0,
            order=order,
        )
    sim = pairwise_cosine(feats)
    scores = sim[np.ix_(pool, set_b)]
    best = scores.max(axis=1)
    ranked = _stable_desc_order(best)
    chosen = ranked[:k]
    rest = ranked[k:]
    set_a = [pool[i] for i in chosen]
    dest = [int(np.argmax(scores[i])) for i in chosen]
    protected = pinned + [pool[i] for i in rest]
    return MergePlan(
        protected=tuple(protected),
        set_a=tuple(set_a),
        set_b=tuple(set_b),
        dest_in_b=tuple(dest),
        k=k,
        order=order,
    )


def apply_merge(
    plan: MergePlan, values, sizes
) -> tuple[TokenMatrix, TokenSizes]:
    """Apply a plan to a value matrix and its size vector.

    Every destination row becomes the size-weighted average of its group
    (the destination plus all sources mapped to it) and its size becomes
    the group's total; protected rows pass through untouched.  Total size
    is conserved exactly up to float summation.
    """
    vals = as_token_matrix(values)
    m = as_token_sizes(sizes, vals.shape[0])
    if vals.shape[0] != plan.n_tokens:
        raise ShapeMismatchError(
            f"plan is for {plan.n_tokens} tokens, values have {vals.shape[0]} rows"
        )
    prot = list(plan.protected)
    a_idx = np.array(plan.set_a, dtype=int)
    b_idx = np.array(plan.set_b, dtype=int)
    dest = np.array(plan.dest_in_b, dtype=int)

    if len(b_idx):
        weighted_b = vals[b_idx] * m[b_idx, None]
        size_b = m[b_idx].copy()
        if len(a_idx):
            np.add.at(weighted_b, dest, vals[a_idx] * m[a_idx, None])
            np.add.at(size_b, dest, m[a_idx])
        merged_b = weighted_b / size_b[:, None]
    else:
        merged_b = np.empty((0, vals.shape[1]))
        size_b = np.empty(0)

    out_vals = np.concatenate([vals[prot], merged_b], axis=0)
    out_sizes = np.concatenate([m[prot], size_b])
    if plan.order == ORDER_ORIGINAL:
        keys = [min(g) for g in _groups_protected_then_b(plan)]
        perm = np.argsort(np.array(keys), kind="stable")
        out_vals = out_vals[perm]
        out_sizes = out_sizes[perm]
    return out_vals, out_sizes


def _groups_protected_then_b(plan: MergePlan) -> list[list[int]]:
    groups = [[i] for i in plan.protected]
    b_groups = [[b] for b in plan.set_b]
    for a, d in zip(plan.set_a, plan.dest_in_b):
        b_groups[d].append(a)
    return groups + b_groups


def proportional_attention_bias(sizes) -> np.ndarray:
    """Log of token sizes, added to attention logits as a per-key bias.

    Keys representing s merged patches then attract softmax mass as if the
    s patches were still present; all-ones sizes give a zero bias and
    leave attention unchanged.
    """
    arr = np.asarray(sizes, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"sizes must be a vector, got shape {arr.shape}")
    if np.any(arr <= 0.0):
        raise NonPositiveSizeError("proportional attention needs sizes > 0")
    return np.log(arr)


def brute_force_nearest(a_feats, b_feats) -> np.ndarray:
    """Oracle for destination assignment: exhaustive double loop.

    For each row of ``a_feats``, the index of the most cosine-similar row
    of ``b_feats``; ties break to the lowest index.  Kept deliberately
    naive and independent of the vectorized planner path.
    """
    a = as_token_matrix(a_feats)
    b = as_token_matrix(b_feats)
    out = np.empty(a.shape[0], dtype=int)
    for i in range(a.shape[0]):
        best_j = 0
        best_val = -np.inf
        for j in range(b.shape[0]):
            val = cosine_similarity(a[i], b[j])
            if val > best_val:
                best_val = val
                best_j = j
        out[i] = best_j
    return out
