"""Confounder-adjusted (conditional) PCA features and MEWMA monitoring."""

from ._backend import BACKEND, COMPILED
from .bootstrap import (
    BlockPlan,
    Bands,
    CalibrationResult,
    block_resample,
    calibrate_h4,
    cov_confidence_bands,
    detection_metrics,
    estimate_arl,
    make_block_plan,
)
from .covariance import (
    CondCovModel,
    KernelSpec,
    PartialCov,
    estimate_cond_cov,
    kernel_weight,
    nearest_psd,
    partial_covariance,
    select_bandwidth_cv,
    select_bandwidths_cv,
)
from .data import (
    PHASE_I,
    PHASE_II,
    Dataset,
    IngestSchema,
    day_blocks,
    downsample_hourly,
    gap_report,
    load_dataset,
    split_phases,
    write_dataset,
)
from .errors import *  # noqa: F401,F403
from .mean import MeanModel, PSplineConfig, fit_nw_mean, fit_pspline_mean, predict_mean
from .mewma import (
    ARLEstimate,
    ChartConfig,
    ChartResult,
    fit_chart_config,
    mewma_update,
    run_chart,
    run_length,
    simulate_arl,
    t2_statistic,
)
from .recon import (
    CondEigen,
    ReconModel,
    ScoreVector,
    align_eigen,
    compute_scores,
    conditional_eigen,
    fit_recon,
    load_model,
    reconstruct,
    reconstruct_partial,
    reconstruct_unsupervised,
    save_model,
)
from .simulate import (
    DamageWindow,
    SimConfig,
    SimTruth,
    bridge_like_config,
    detection_config,
    simulate_dataset,
    temperature_path,
)

__version__ = "0.1.0"
