"""Energy-based token merging with spectral-preservation verification.

The library implements two token-merging planners for transformer blocks:
an energy-based one that protects isolated tokens before bipartite soft
matching, and the index-parity baseline it improves on.  A toy transformer
block embeds either planner between attention and MLP, and a spectral
toolbox (graph coarsening, lifting, normalized-Laplacian spectra) verifies
that energy-based merging preserves the token graph's spectrum on
synthetic clustered data while the baseline does not.
"""

from .energy import EnergyParams, energy_scores, margin_for_layer, margin_gate
from .errors import (
    AssumptionUnsatisfiableError,
    BadIndexError,
    BadPartitionError,
    InvalidKError,
    InvalidLayerError,
    NoConvergenceError,
    NonPositiveSizeError,
    PitomeLabError,
    ScheduleExhaustedError,
    ShapeMismatchError,
    ZeroVectorError,
)
from .harness import (
    ClusterSpec,
    ExperimentConfig,
    ExperimentRow,
    ScheduleComparison,
    experiment_csv,
    gen_clustered_tokens,
    kappa_sweep,
    matched_fixed_k,
    run_schedule_compare,
    run_theorem1_experiment,
    summarize_mean_sd,
    theorem_margin,
)
from .merge import (
    MergePlan,
    apply_merge,
    brute_force_nearest,
    merge_count,
    ones_sizes,
    plan_pitome,
    plan_pitome_k,
    plan_tome,
    proportional_attention_bias,
)
from .spectral import (
    CoarseGraph,
    Lemma1Result,
    LiftedGraph,
    Partition,
    SpectralReport,
    build_spectral_report,
    coarsen,
    combinatorial_laplacian,
    cross_cluster_beta,
    epsilon_step,
    lift,
    merge_trajectory,
    normalized_laplacian,
    spectral_distance,
    symmetric_eigenvalues,
    verify_lemma1,
    weyl_step_gap,
)
from .token_graph import (
    WeightedGraph,
    build_weighted_graph,
    cosine_similarity,
    load_tokens_csv,
    pairwise_cosine,
    save_tokens_csv,
)
from .transformer import (
    BlockWeights,
    FlopsReport,
    ScheduleSpec,
    attention_block,
    flops_estimate,
    forward_block_with_merge,
    schedule_token_counts,
)

__version__ = "0.1.0"
