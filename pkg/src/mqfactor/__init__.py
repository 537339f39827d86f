"""Quantile factor models for matrix-valued time series.

Estimation, rank selection, smoothed inference, simulation and imputation
for panels of matrices whose conditional quantiles have a low-rank
structure R F_t C'.
"""

from .core import (
    FactorParams,
    FitResult,
    MatrixPanel,
    QuantileLevel,
    RateL,
    as_quantile,
    check_loss,
    common_component,
    loading_distance,
    objective,
    rate_L,
    smoothed_objective,
    space_similarity,
    theta_distance,
)
from .estimator import (
    AsymptoticStats,
    FitConfig,
    asymptotic_stats,
    fit,
    impute,
    init_random,
    normalize,
    smoothed_fit,
)
from .kernels import KernelSpec, build_kernel, default_bandwidth
from .qrsolve import (
    DegenerateDesignError,
    QrProblem,
    solve_qr,
    solve_qr_batch,
    solve_qr_smoothed,
    solve_qr_smoothed_batch,
)
from .selection import (
    SelectionResult,
    overfit_sigmas,
    select_er,
    select_ic,
    select_rm,
    vec_select_rm,
)
from .simulate import (
    DgpConfig,
    SimTruth,
    align_columns,
    corrupt,
    gen_panel,
    ma_dependent_field,
    mask_random,
    run_clt_experiment,
    run_loading_experiment,
    run_selection_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "QuantileLevel",
    "MatrixPanel",
    "FactorParams",
    "FitResult",
    "RateL",
    "as_quantile",
    "check_loss",
    "objective",
    "smoothed_objective",
    "theta_distance",
    "loading_distance",
    "space_similarity",
    "common_component",
    "rate_L",
    "KernelSpec",
    "build_kernel",
    "default_bandwidth",
    "QrProblem",
    "DegenerateDesignError",
    "solve_qr",
    "solve_qr_batch",
    "solve_qr_smoothed",
    "solve_qr_smoothed_batch",
    "FitConfig",
    "AsymptoticStats",
    "init_random",
    "normalize",
    "fit",
    "smoothed_fit",
    "asymptotic_stats",
    "impute",
    "SelectionResult",
    "overfit_sigmas",
    "select_rm",
    "select_ic",
    "select_er",
    "vec_select_rm",
    "DgpConfig",
    "SimTruth",
    "gen_panel",
    "corrupt",
    "mask_random",
    "align_columns",
    "ma_dependent_field",
    "run_selection_experiment",
    "run_loading_experiment",
    "run_clt_experiment",
    "__version__",
]
