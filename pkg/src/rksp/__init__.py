"""Spectral stability profiling of residual streams.

Estimates per-layer linear operators from paired residual snapshots via
whitened least-squares fits, summarizes their spectra into divergence
risk diagnostics, evaluates prediction quality over trial cohorts, and
provides a differentiable spectral-shaping regularizer plus a synthetic
dynamics lab for end-to-end validation at desk scale.
"""

from .diagnostics import (
    KreissEstimate,
    KreissGrid,
    MassThresholds,
    ModeReliability,
    SpectralMasses,
    bauer_fike_check,
    check_kreiss_inequality,
    depth_energy_product,
    energy_preservation_check,
    kreiss_constant,
    nonlinearity_ratio,
    resdmd_filter,
    spectral_masses,
)
from .dmd import DmdOperator, dmd_fit, randomized_dmd
from .kss import (
    KssConfig,
    KssEvaluation,
    kss_gradient,
    kss_loss,
    operator_gradient,
    sample_layers,
    total_objective,
)
from .profiler import (
    LayerSpectralProfile,
    ProfilerConfig,
    SpectralProfile,
    profile,
    risk_score,
)
from .snapshots import (
    SnapshotDataset,
    load_csv_dir,
    load_dataset,
    subsample_columns,
    write_csv_dir,
    write_dataset,
)
from .stats import (
    CohortResult,
    EvalReport,
    Trial,
    auroc,
    bootstrap_ci,
    ece,
    evaluate_cohort,
    fisher_exact,
)
from .whiten import WhitenedPair, whiten

__version__ = "0.1.0"
