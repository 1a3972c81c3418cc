"""Diversity-multiplexing tradeoff toolkit for selective-fading MIMO channels.

Submodules: ``channel`` (covariance models and correlated sampling),
``tradeoff`` (mutual information, outage Monte Carlo, diversity curves),
``codes`` (codebooks and design criteria), ``precoder`` (shift-based inner
codes), ``sim`` (pairwise error bounds and ML error simulation), ``cli``.
"""

from .channel import (
    BlockCirculant,
    BlockFading,
    ChannelDims,
    ChannelRealization,
    CovarianceMatrix,
    CyclicIsi,
    Fast,
    Flat,
    ScatteringSpec,
    TimeFrequency,
    build_block_circulant,
    build_covariance,
    circulant_covariance,
    sample_channel,
    sample_channel_batch,
)
from .codes import (
    Codebook,
    EffectiveDifference,
    PermutationCode,
    QamFamily,
    block_fading_check,
    delta_decomposition,
    effective_difference,
    min_entry_criterion,
    pairwise_min_products,
    permutation_codebook,
    qam_family,
    search_permutations,
    stacked_isi_difference,
    verify_dmt_criterion,
    verify_rank_r0,
    xi_metric,
)
from .precoder import (
    Precoder,
    apply_precoder,
    classic_precoder,
    design_tf_shift_precoder,
    verify_composed_design,
    verify_precoder_rank,
    verify_tf_precoder,
)
from .sim import (
    PepBound,
    TraceBoundInstance,
    least_favorable_trace,
    pep_chernoff,
    pep_monte_carlo,
    simulate_error_prob,
    trace_oracle,
)
from .tradeoff import (
    DmtCurve,
    FixedRate,
    OutageEstimate,
    ScalingRate,
    SingularityLevels,
    SnrPoint,
    estimate_outage,
    fit_diversity_slope,
    jensen_dmt_curve,
    jensen_mutual_information,
    mutual_information,
    singularity_levels,
)

__version__ = "0.1.0"
