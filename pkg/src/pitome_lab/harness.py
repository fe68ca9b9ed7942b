"""Synthetic clustered data, the spectral-preservation experiment, and the
merging-schedule comparison.

The token-merging theory is stated for clustered token sets: every token
sits near one of a few cluster directions, within-cluster cosines exceed a
margin that all cross-cluster cosines stay below, and cluster sizes are
ordered.  No public dataset exercises those assumptions directly at desk
scale, so this module generates them: cluster means are (near-)orthogonal
axis directions, tokens are unit-normalized mean-plus-gaussian-noise draws
with concentration kappa (noise scale 1/kappa), and draws that violate the
margin assumption are rejected and resampled.

By default each cluster mean is tilted slightly toward the next axis so
that every pair of clusters has its own distinct cross cosine.  With
exactly orthogonal means, equal-count clusters are energetically
indistinguishable, and single-pair merge trajectories then take a
noise-driven wrong turn at a constant rate no matter how concentrated the
clusters are; the distinct-profile tilt restores the separation the
convergence statement needs while keeping every cross cosine far below
the margin.  Pass ``mean_tilt=0`` for exactly orthogonal means.

Experiment streams are common-random-number: the seed index selects the
underlying gaussian draws, which are shared across the whole concentration
sweep, so sweep curves are not confounded by draw-to-draw noise.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyParams
from .errors import AssumptionUnsatisfiableError, BadPartitionError
from .merge import merge_count
from .rng import SplitMix64, derive_seed
from .spectral import (
    Partition,
    build_spectral_report,
    cross_cluster_beta,
    merge_trajectory,
)
from .token_graph import TokenMatrix, build_weighted_graph, pairwise_cosine
from .transformer import (
    MODE_FIXED_K,
    MODE_RATIO,
    FlopsReport,
    ScheduleSpec,
    flops_estimate,
    schedule_token_counts,
)

THREADS_ENV_VAR = "PITOME_LAB_THREADS"
DEFAULT_MEAN_TILT = 0.25
MAX_A2_RETRIES = 1000
_EQUAL_SIZES_MARGIN = 0.8


@dataclass(frozen=True)
class ClusterSpec:
    """One synthetic instance: cluster sizes (descending), feature dim,
    concentration kappa, and the 64-bit draw seed."""

    cluster_sizes: tuple[int, ...]
    dim: int
    kappa: float
    seed: int
    mean_tilt: float = DEFAULT_MEAN_TILT
    antipodal: bool = False

    def __post_init__(self):
        sizes = self.cluster_sizes
        if not sizes or any(s < 1 for s in sizes):
            raise BadPartitionError("cluster sizes must be positive")
        if list(sizes) != sorted(sizes, reverse=True):
            raise BadPartitionError("cluster sizes must be sorted descending")
        if self.dim < 2 * len(sizes):
            raise BadPartitionError(
                f"need dim >= 2 * clusters for well-separated means, got "
                f"dim={self.dim} for {len(sizes)} clusters"
            )
        if self.kappa <= 0:
            raise BadPartitionError(f"kappa must be positive, got {self.kappa}")

    @property
    def n_tokens(self) -> int:
        return sum(self.cluster_sizes)


def theorem_margin(cluster_sizes) -> float:
    """The universal margin max{N_j / N_i} over strictly smaller-vs-larger
    cluster pairs.  Configurations whose sizes are all equal have no such
    pair; they fall back to a fixed mid-range margin."""
    sizes = sorted(cluster_sizes, reverse=True)
    ratios = [
        sizes[j] / sizes[i]
        for i in range(len(sizes))
        for j in range(i + 1, len(sizes))
        if sizes[j] < sizes[i]
    ]
    return max(ratios) if ratios else _EQUAL_SIZES_MARGIN


def _cluster_means(spec: ClusterSpec) -> np.ndarray:
    s = len(spec.cluster_sizes)
    h = spec.dim
    means = np.zeros((s, h))
    if spec.antipodal:
        for c in range(s):
            means[c, c // 2] = 1.0 if c % 2 == 0 else -1.0
        return means
    for c in range(s):
        means[c, c] = 1.0
        if spec.mean_tilt:
            means[c, (c + 1) % s] = spec.mean_tilt * (c + 1) / s
            means[c] /= np.linalg.norm(means[c])
    return means


def _satisfies_margin(sim: np.ndarray, labels: np.ndarray, margin: float) -> bool:
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    within = sim[same & off]
    cross = sim[~same]
    within_ok = within.size == 0 or float(within.min()) >= margin
    cross_ok = cross.size == 0 or float(cross.max()) < margin
    return within_ok and cross_ok


def gen_clustered_tokens(spec: ClusterSpec) -> tuple[TokenMatrix, Partition]:
    """Draw one clustered token set satisfying the margin assumption.

    Tokens are unit-normalized mean + noise/kappa draws laid out in
    construction order (cluster 0 first).  Whole instances violating the
    margin assumption for the theorem margin of ``spec.cluster_sizes`` are
    rejected and redrawn; exhausting the retry budget raises
    AssumptionUnsatisfiableError (kappa too small for the margin).
    """
    margin = theorem_margin(spec.cluster_sizes)
    means = _cluster_means(spec)
    labels = np.concatenate(
        [np.full(sz, c) for c, sz in enumerate(spec.cluster_sizes)]
    )
    n, h = len(labels), spec.dim
    for retry in range(MAX_A2_RETRIES):
        gen = SplitMix64(derive_seed(spec.seed, retry))
        noise = gen.gaussian_matrix(n, h) / spec.kappa
        tokens = means[labels] + noise
        norms = np.linalg.norm(tokens, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            continue
        tokens = tokens / norms
        sim = pairwise_cosine(tokens)
        if _satisfies_margin(sim, labels, margin):
            return tokens, Partition.from_labels(labels)
    raise AssumptionUnsatisfiableError(
        f"no draw satisfied the margin {margin:.3f} within {MAX_A2_RETRIES} "
        f"retries (kappa={spec.kappa:g} too small)"
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition for the spectral-preservation experiment."""

    cluster_sizes: tuple[int, ...]
    dim: int
    kappas: tuple[float, ...]
    seeds: int
    algos: tuple[str, ...] = ("pitome", "tome")
    base_seed: int = 0
    mean_tilt: float = DEFAULT_MEAN_TILT
    antipodal: bool = False
    alpha: float = 1.0

    def __post_init__(self):
        if len(self.kappas) < 2:
            raise BadPartitionError("sweep needs at least 2 concentration points")
        if self.seeds < 1:
            raise BadPartitionError("need at least 1 seed per point")


def kappa_sweep(lo: float, hi: float, count: int, log_spaced: bool = True):
    if count < 2 or lo <= 0 or hi <= lo:
        raise BadPartitionError(
            f"bad sweep bounds lo={lo}, hi={hi}, count={count}"
        )
    if log_spaced:
        return tuple(np.logspace(np.log10(lo), np.log10(hi), count))
    return tuple(np.linspace(lo, hi, count))


@dataclass(frozen=True)
class ExperimentRow:
    """One (kappa, seed, algo) trajectory outcome."""

    kappa: float
    seed: int
    algo: str
    steps: int
    sd: float
    epsilon_sum: float
    bound: float
    bound_ok: bool
    error: str = ""
    partition: Partition | None = field(default=None, compare=False)


def _run_point(args) -> list[ExperimentRow]:
    cfg, kappa, seed_index = args
    spec = ClusterSpec(
        cluster_sizes=cfg.cluster_sizes,
        dim=cfg.dim,
        kappa=kappa,
        seed=derive_seed(cfg.base_seed, seed_index),
        mean_tilt=cfg.mean_tilt,
        antipodal=cfg.antipodal,
    )
    margin = theorem_margin(cfg.cluster_sizes)
    params = EnergyParams(margin=margin, alpha=cfg.alpha)
    steps = spec.n_tokens - len(cfg.cluster_sizes)
    rows: list[ExperimentRow] = []
    try:
        tokens, truth = gen_clustered_tokens(spec)
    except AssumptionUnsatisfiableError as exc:
        return [
            ExperimentRow(kappa, seed_index, algo, steps, np.nan, np.nan,
                          np.nan, False, error=str(exc))
            for algo in cfg.algos
        ]
    graph = build_weighted_graph(tokens)
    beta = cross_cluster_beta(graph, truth, margin, cfg.alpha)
    for algo in cfg.algos:
        partition, merged_pairs = merge_trajectory(tokens, algo, steps, params)
        report = build_spectral_report(graph, truth, partition, merged_pairs, beta)
        rows.append(
            ExperimentRow(
                kappa=kappa,
                seed=seed_index,
                algo=algo,
                steps=steps,
                sd=report.sd,
                epsilon_sum=float(sum(report.per_step_epsilon)),
                bound=report.bound,
                bound_ok=report.bound_satisfied,
                partition=partition,
            )
        )
    return rows


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        return 1
    if value == 0:
        return os.cpu_count() or 1
    return max(1, value)


def run_theorem1_experiment(cfg: ExperimentConfig) -> list[ExperimentRow]:
    """Run both merge algorithms down to one node per true cluster for
    every (kappa, seed) and report spectral distances with their
    epsilon-sum bounds.  Failed seeds are recorded as rows with an error
    message, not raised.  Rows come back sorted by (kappa, seed, algo) so
    worker parallelism never changes the output.
    """
    points = [
        (cfg, kappa, seed) for kappa in cfg.kappas for seed in range(cfg.seeds)
    ]
    workers = _worker_count()
    if workers > 1 and len(points) > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(_run_point, points))
        except OSError:
            chunks = [_run_point(p) for p in points]
    else:
        chunks = [_run_point(p) for p in points]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.kappa, r.seed, r.algo))
    return rows


def summarize_mean_sd(rows: list[ExperimentRow]) -> dict[tuple[float, str], float]:
    """Mean spectral distance per (kappa, algo), failed seeds excluded."""
    acc: dict[tuple[float, str], list[float]] = {}
    for row in rows:
        if row.error:
            continue
        acc.setdefault((row.kappa, row.algo), []).append(row.sd)
    return {key: float(np.mean(vals)) for key, vals in acc.items()}


def experiment_csv(rows: list[ExperimentRow]) -> str:
    """CSV for an experiment: one row per trajectory, then per-(kappa,
    algo) mean-SD summary rows."""
    lines = ["kind,seed,kappa,algo,steps,sd,epsilon_sum,bound,bound_ok"]
    for r in rows:
        lines.append(
            f"run,{r.seed},{r.kappa:.17g},{r.algo},{r.steps},{r.sd:.17g},"
            f"{r.epsilon_sum:.17g},{r.bound:.17g},{int(r.bound_ok)}"
        )
    means = summarize_mean_sd(rows)
    for (kappa, algo) in sorted(means):
        lines.append(
            f"summary,-1,{kappa:.17g},{algo},0,{means[(kappa, algo)]:.17g},0,0,1"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ScheduleComparison:
    """Ratio-vs-fixed-k schedule comparison at matched final counts."""

    ratio_report: FlopsReport
    fixed_report: FlopsReport
    fixed_k: int
    ratio_seconds: float | None = None
    fixed_seconds: float | None = None

    def to_csv(self) -> str:
        lines = [
            "layer,ratio_tokens_in,ratio_tokens_out,ratio_attn,ratio_mlp,"
            "ratio_merge,fixed_tokens_in,fixed_tokens_out,fixed_attn,"
            "fixed_mlp,fixed_merge"
        ]
        for i, (r_row, f_row) in enumerate(
            zip(self.ratio_report.per_layer, self.fixed_report.per_layer)
        ):
            lines.append(f"{i}," + ",".join(str(x) for x in r_row + f_row))
        lines.append(
            f"total,,,{self.ratio_report.total},,,,,{self.fixed_report.total},,"
        )
        return "\n".join(lines) + "\n"


def matched_fixed_k(n0: int, layers: int, r: float) -> tuple[int, int]:
    """Fixed k per layer whose floored schedule lands on the ratio
    schedule's final count: k = ceil(removed / layers) with the last
    removals trimmed by the floor."""
    final = schedule_token_counts(n0, ScheduleSpec(MODE_RATIO, layers, r=r))[-1]
    removed = n0 - final
    k = -(-removed // layers)
    return k, final


def run_schedule_compare(
    n0: int,
    h: int,
    layers: int,
    r: float,
    k: int | None = None,
    tokens: TokenMatrix | None = None,
    block_seed: int = 0,
) -> ScheduleComparison:
    """FLOPs for a keep-ratio schedule vs a fixed-k schedule.

    With ``k=None`` the fixed schedule is constructed to match the ratio
    schedule's final token count (constant k, floored at the target).
    Supplying ``tokens`` additionally runs both schedules end to end
    through the toy block and records wall time (timings stay out of the
    CSV, which must be byte-deterministic).
    """
    ratio_spec = ScheduleSpec(MODE_RATIO, layers, r=r)
    if k is None:
        k, final = matched_fixed_k(n0, layers, r)
        fixed_spec = ScheduleSpec(
            MODE_FIXED_K, layers, k_per_layer=k, floor_tokens=final
        )
    else:
        fixed_spec = ScheduleSpec(MODE_FIXED_K, layers, k_per_layer=k)
    ratio_report = flops_estimate(n0, h, ratio_spec)
    fixed_report = flops_estimate(n0, h, fixed_spec)
    ratio_seconds = fixed_seconds = None
    if tokens is not None:
        ratio_seconds = _timed_forward(tokens, h, ratio_spec, block_seed)
        fixed_seconds = _timed_forward(tokens, h, fixed_spec, block_seed)
    return ScheduleComparison(
        ratio_report=ratio_report,
        fixed_report=fixed_report,
        fixed_k=k,
        ratio_seconds=ratio_seconds,
        fixed_seconds=fixed_seconds,
    )


def _timed_forward(tokens, h, spec: ScheduleSpec, block_seed: int) -> float:
    from .merge import ones_sizes
    from .transformer import BlockWeights, forward_block_with_merge

    x = np.asarray(tokens, dtype=np.float64)
    sizes = ones_sizes(x.shape[0])
    start = time.perf_counter()
    for layer in range(spec.layers):
        w = BlockWeights.random(h, derive_seed(block_seed, layer))
        x, sizes = forward_block_with_merge(
            x, sizes, w, layer, spec.layers, algo="pitome", schedule=spec
        )
    return time.perf_counter() - start
