"""Graph coarsening, lifting, spectra, and the spectral-preservation checks.

Token merging induces a partition of the original token graph; coarsening
block-averages the weight matrix over the partition, lifting expands the
coarse weights back to full size.  The spectral distance between the
original graph and a coarsening is the l1 distance between the sorted
normalized-Laplacian spectra of the original and lifted graphs, and the
per-merge edge-weight discrepancies epsilon bound it from above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyParams, energy_scores
from .errors import (
    BadIndexError,
    BadPartitionError,
    NoConvergenceError,
    ShapeMismatchError,
)
from .merge import MergePlan, apply_merge, plan_tome
from .token_graph import (
    TokenMatrix,
    WeightedGraph,
    as_token_matrix,
    pairwise_cosine,
)

ALGO_PITOME = "pitome"
ALGO_TOME = "tome"


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of node indices 0..N-1 by nonempty groups.

    Groups are stored in canonical form: each group sorted ascending, the
    groups ordered by smallest member, so partitions compare by value.
    """

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.groups:
            raise BadPartitionError("partition must have at least one group")
        seen: list[int] = []
        for g in self.groups:
            if len(g) == 0:
                raise BadPartitionError("empty group in partition")
            seen.extend(g)
        n = len(seen)
        if sorted(seen) != list(range(n)):
            raise BadPartitionError("groups must disjointly cover 0..N-1")

    @classmethod
    def from_groups(cls, groups) -> "Partition":
        canon = tuple(
            tuple(sorted(int(i) for i in g))
            for g in sorted(groups, key=lambda g: min(g))
        )
        return cls(groups=canon)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(groups=tuple((i,) for i in range(n)))

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        labels = list(labels)
        buckets: dict[object, list[int]] = {}
        for i, lab in enumerate(labels):
            buckets.setdefault(lab, []).append(i)
        return cls.from_groups(buckets.values())

    @property
    def n_nodes(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_map(self) -> np.ndarray:
        gmap = np.empty(self.n_nodes, dtype=int)
        for gi, g in enumerate(self.groups):
            gmap[list(g)] = gi
        return gmap

    def group_sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=np.float64)


@dataclass(frozen=True)
class CoarseGraph:
    """Block-mean adjacency over a partition (n x n, self-weights allowed)."""

    weights: np.ndarray

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class LiftedGraph:
    """Coarse weights expanded back to the original node set (N x N)."""

    weights: np.ndarray

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]


def _check_partition_for(g: WeightedGraph, p: Partition) -> None:
    if p.n_nodes != g.node_count:
        raise BadPartitionError(
            f"partition covers {p.n_nodes} nodes, graph has {g.node_count}"
        )


def coarsen(g: WeightedGraph, p: Partition) -> CoarseGraph:
    """Block-mean coarsening; diagonal blocks average intra-group weights
    (their zero diagonal entries included)."""
    _check_partition_for(g, p)
    w = g.weights
    n = p.n_groups
    wc = np.empty((n, n))
    for i, gi in enumerate(p.groups):
        for j in range(i, n):
            gj = p.groups[j]
            block = w[np.ix_(list(gi), list(gj))]
            wc[i, j] = wc[j, i] = block.mean()
    return CoarseGraph(weights=wc)


def lift(g: WeightedGraph, p: Partition) -> LiftedGraph:
    """Expand the coarse weights back to N x N by group membership."""
    wc = coarsen(g, p).weights
    gmap = p.group_map()
    return LiftedGraph(weights=wc[np.ix_(gmap, gmap)])


def combinatorial_laplacian(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    lap = -w.copy()
    lap[np.diag_indices_from(lap)] += w.sum(axis=1)
    return lap


def normalized_laplacian(weights) -> np.ndarray:
    """I - D^(-1/2) W D^(-1/2); rows of degree zero become all-zero rows
    (isolated-node convention) rather than an error, since duplicate-token
    graphs legitimately contain zero-weight edges."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeMismatchError(f"weights must be square, got {w.shape}")
    deg = w.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = -np.outer(inv_sqrt, inv_sqrt) * w
    diag = np.where(nz, 1.0 + np.diag(lap), 0.0)
    lap[np.diag_indices_from(lap)] = diag
    return lap


def symmetric_eigenvalues(mat, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a symmetric matrix via cyclic Jacobi rotations.

    The input is symmetrized as (M + M^T)/2 first.  Sweeps continue until
    the off-diagonal Frobenius norm drops below 1e-12 times the matrix
    Frobenius norm; exceeding ``max_sweeps`` raises NoConvergenceError.
    Returns eigenvalues sorted ascending.
    """
    m = np.asarray(mat, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatchError(f"matrix must be square, got {m.shape}")
    a = (m + m.T) / 2.0
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    tol = 1e-12 * np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    raise NoConvergenceError(
        f"Jacobi did not reach tolerance {tol:g} in {max_sweeps} sweeps"
    )


def spectral_distance(g: WeightedGraph, p: Partition) -> float:
    """l1 distance between sorted normalized-Laplacian spectra of the
    original and lifted graphs (both length N, so no pairing ambiguity)."""
    _check_partition_for(g, p)
    lam = symmetric_eigenvalues(normalized_laplacian(g.weights))
    lam_l = symmetric_eigenvalues(normalized_laplacian(lift(g, p).weights))
    return float(np.abs(lam - lam_l).sum())


def cross_cluster_beta(
    g: WeightedGraph, truth: Partition, margin: float, alpha: float = 1.0
) -> float:
    """Supremum over cross-cluster pairs of the gated-similarity branch
    alpha*(exp(cos - margin) - 1); negative whenever every cross-cluster
    cosine stays below the margin."""
    _check_partition_for(g, truth)
    gmap = truth.group_map()
    cos = 1.0 - g.weights
    cross = gmap[:, None] != gmap[None, :]
    if not cross.any():
        raise BadPartitionError("beta needs at least two groups")
    return float(np.max(alpha * (np.exp(cos[cross] - margin) - 1.0)))


def epsilon_step(
    g: WeightedGraph, a: int, b: int, truth: Partition, beta: float
) -> float:
    """Edge-weight discrepancy bound for merging nodes a and b:
    2*W[a, b] when they share a truth group (W = 1 - cos), else
    3*(1 - beta)."""
    n = g.node_count
    if a == b or not (0 <= a < n and 0 <= b < n):
        raise BadIndexError(f"need two distinct node indices in [0, {n}), got {a}, {b}")
    _check_partition_for(g, truth)
    gmap = truth.group_map()
    if gmap[a] == gmap[b]:
        return float(2.0 * g.weights[a, b])
    return float(3.0 * (1.0 - beta))


@dataclass(frozen=True)
class Lemma1Result:
    """Outcome of the lifted-spectrum preservation check."""

    ok: bool
    max_deviation: float
    extra_ones: int


def coarse_spectrum_with_sizes(wc: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Eigenvalues of the coarse normalized Laplacian with node
    multiplicities: degrees are size-weighted (delta_g = sum_h W_c[g,h] *
    |V_h|) and the operator is I - diag(sqrt(s/delta)) W_c
    diag(sqrt(s/delta)).  This is the coarse spectrum the lifted graph
    actually preserves; the plain row-sum normalization does not satisfy
    the preservation identity for unequal group sizes."""
    delta = wc @ sizes
    scale = np.zeros_like(delta)
    nz = delta > 0
    scale[nz] = np.sqrt(sizes[nz] / delta[nz])
    s_op = np.outer(scale, scale) * wc
    lap = -s_op
    lap[np.diag_indices_from(lap)] += np.where(nz, 1.0, 0.0)
    return symmetric_eigenvalues(lap)


def verify_lemma1(
    g: WeightedGraph, p: Partition, tol: float = 1e-6
) -> Lemma1Result:
    """Check that the lifted graph's normalized-Laplacian spectrum equals
    the coarse spectrum plus the eigenvalue 1 with multiplicity N - n.

    Sorted lists are compared elementwise, which is the optimal matching
    for the max deviation.  Requires positive degrees throughout; a graph
    with isolated groups falls outside the preservation identity.
    """
    _check_partition_for(g, p)
    n_nodes = g.node_count
    n_groups = p.n_groups
    lam_l = symmetric_eigenvalues(normalized_laplacian(lift(g, p).weights))
    lam_c = coarse_spectrum_with_sizes(coarsen(g, p).weights, p.group_sizes())
    expected = np.sort(
        np.concatenate([lam_c, np.ones(n_nodes - n_groups)])
    )
    dev = float(np.max(np.abs(np.sort(lam_l) - expected))) if n_nodes else 0.0
    extra = int(np.sum(np.abs(lam_l - 1.0) <= tol)) if n_nodes else 0
    return Lemma1Result(ok=dev <= tol, max_deviation=dev, extra_ones=extra)


def weyl_step_gap(g: WeightedGraph, a: int, b: int) -> tuple[float, float]:
    """Single-merge Weyl check on combinatorial Laplacians.

    Returns (lhs, rhs) with lhs = l1 distance between the sorted spectra
    of L and the lifted L_l for the merge {a, b}, and
    rhs = N * sqrt(||E||_inf * ||E||_1) for E = L - L_l; Weyl's inequality
    guarantees lhs <= rhs.
    """
    n = g.node_count
    if a == b or not (0 <= a < n and 0 <= b < n):
        raise BadIndexError(f"need two distinct node indices in [0, {n}), got {a}, {b}")
    groups = [[i] for i in range(n) if i not in (a, b)]
    groups.append([a, b])
    p = Partition.from_groups(groups)
    lap = combinatorial_laplacian(g.weights)
    lap_l = combinatorial_laplacian(lift(g, p).weights)
    lam = symmetric_eigenvalues(lap)
    lam_l = symmetric_eigenvalues(lap_l)
    lhs = float(np.abs(lam - lam_l).sum())
    err = lap - lap_l
    norm_inf = float(np.max(np.abs(err).sum(axis=1)))
    norm_one = float(np.max(np.abs(err).sum(axis=0)))
    rhs = n * float(np.sqrt(norm_inf * norm_one))
    return lhs, rhs


def _single_pair_pitome_plan(features: np.ndarray, params: EnergyParams) -> MergePlan:
    """One merge step of the energy-based algorithm.

    The full energy-sorted bipartition is formed (every token mergeable,
    A = odd ranks, B = even ranks), each A token is matched to its most
    similar B token, and the single matched pair with the highest
    similarity merges.  This is the one-pair-per-iteration restriction of
    the planner, truncated by match similarity exactly as the baseline
    truncates its top-k.
    """
    sim = pairwise_cosine(features)
    energies = energy_scores(sim, params)
    n = sim.shape[0]
    order = np.argsort(-energies, kind="stable")
    pool = order[: 2 * (n // 2)]
    set_a = pool[0::2]
    set_b = pool[1::2]
    scores = sim[np.ix_(set_a, set_b)]
    best = scores.max(axis=1)
    p_best = int(np.argmax(best))
    q_best = int(np.argmax(scores[p_best]))
    a = int(set_a[p_best])
    b = int(set_b[q_best])
    protected = tuple(int(i) for i in order if i not in (a, b))
    return MergePlan(
        protected=protected, set_a=(a,), set_b=(b,), dest_in_b=(0,), k=1
    )


def merge_trajectory(
    tokens,
    algo: str,
    steps: int,
    params: EnergyParams,
) -> tuple[Partition, list[tuple[int, int]]]:
    """Iterate single-pair merges and record the induced partition.

    One pair merges per step; planning is redone each step on the current
    (merged, size-weighted) features, and rows follow the planner's
    protected-then-B output order between steps.  Returns the partition of
    original indices after ``steps`` merges plus the per-step merged pairs
    as (source, destination) original-index representatives (the smallest
    original index inside each merged node).
    """
    feats = as_token_matrix(tokens)
    n = feats.shape[0]
    if not 0 <= steps <= n - 1:
        raise BadIndexError(f"steps must be in [0, {n - 1}], got {steps}")
    if algo not in (ALGO_PITOME, ALGO_TOME):
        raise ValueError(f"unknown algorithm {algo!r}")
    sizes = np.ones(n)
    members: list[list[int]] = [[i] for i in range(n)]
    pairs: list[tuple[int, int]] = []
    for _ in range(steps):
        if algo == ALGO_PITOME:
            plan = _single_pair_pitome_plan(feats, params)
        else:
            plan = plan_tome(feats, 1)
        a = plan.set_a[0]
        b = plan.set_b[plan.dest_in_b[0]]
        pairs.append((min(members[a]), min(members[b])))
        feats, sizes = apply_merge(plan, feats, sizes)
        merged_members = members[b] + members[a]
        new_members = [members[i] for i in plan.protected]
        for q, bidx in enumerate(plan.set_b):
            new_members.append(merged_members if bidx == b else members[bidx])
        members = new_members
    return Partition.from_groups(members), pairs


@dataclass(frozen=True)
class SpectralReport:
    """Spectral summary of one coarsening trajectory."""

    lambda_orig: np.ndarray
    lambda_lifted: np.ndarray
    sd: float
    per_step_epsilon: tuple[float, ...]
    bound: float
    bound_satisfied: bool


def build_spectral_report(
    g: WeightedGraph,
    truth: Partition,
    partition: Partition,
    pairs: list[tuple[int, int]],
    beta: float,
    tol: float = 1e-6,
) -> SpectralReport:
    """Assemble eigenvalues, spectral distance, per-step epsilons, and the
    (3N/2) * sum(epsilon) bound check for a finished trajectory."""
    lam = symmetric_eigenvalues(normalized_laplacian(g.weights))
    lam_l = symmetric_eigenvalues(normalized_laplacian(lift(g, partition).weights))
    sd = float(np.abs(lam - lam_l).sum())
    eps = tuple(epsilon_step(g, a, b, truth, beta) for a, b in pairs)
    bound = 1.5 * g.node_count * float(sum(eps))
    return SpectralReport(
        lambda_orig=lam,
        lambda_lifted=lam_l,
        sd=sd,
        per_step_epsilon=eps,
        bound=bound,
        bound_satisfied=sd <= bound + tol,
    )
