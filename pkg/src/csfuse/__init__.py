"""Compressive-sensing detection of dependent multimodal data."""

from .errors import (
    CalibrationError,
    ConfigError,
    CovarianceError,
    CsfuseError,
    DataError,
    DimensionError,
    FitError,
    LeastSquaresError,
    ModelError,
    NumericalError,
)
from .linops import (
    BlockProjection,
    Projection,
    block_compress,
    compress,
    compress_stats,
    frobenius_ratio,
    make_orthoprojector,
)
from .scenarios import (
    HypothesisStats,
    Marginal,
    ScenarioSpec,
    case2_spec,
    closed_form_stats,
    marginal,
    marginal_cdf,
    marginal_pdf,
    sample,
    sample_frames,
)
from .detectors import (
    CopulaSpec,
    GaussianModel,
    OffDiagEstimate,
    OffdiagPlan,
    build_gaussian_model,
    cav_stat,
    compressed_moments,
    copula_logdensity,
    energy_stat,
    energy_threshold,
    fit_copula,
    gaussian_model_from_moments,
    llr_copula,
    llr_ga,
    llr_product,
    ls_offdiag,
    nested_block_inverse,
    sample_cov,
)
from .analysis import (
    CompareDecision,
    DistanceReport,
    RhoB,
    bhatt_gaussian_compressed,
    bhatt_mc,
    compare_rule,
    rho_b,
)
from .harness import (
    DetectorConfig,
    ExperimentConfig,
    RocCurve,
    bench,
    calibrate_threshold,
    run_bounds,
    run_roc,
    trial_scores,
)
from .ingest import (
    FrameSet,
    KdeDensity,
    empirical_gaussian_model,
    frame_and_split,
    kde_fit,
    load_frameset,
    load_series,
    save_frameset,
)

__version__ = "0.1.0"
