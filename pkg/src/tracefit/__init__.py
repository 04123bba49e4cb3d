"""Trace of a sparse matrix inverse from a fitted approximate diagonal."""

from ._kernels import BACKEND
from .approx_diag import (
    DiagApprox,
    IluFactors,
    LowRankFactors,
    diag_from_lowrank,
    diag_inverse_from_ilu,
    ilu_factorize,
    residual_column,
    smallest_singular_triplets,
    variational_bounds,
)
from .dynamics import (
    DynamicConfig,
    DynamicTrajectory,
    StepRecord,
    compare_table,
    estimate_variances,
    monitor_trace_error,
    run_dynamic,
)
from .estimators import (
    EstimatorStats,
    exact_variance_hutchinson,
    exact_variance_residuals,
    exact_variance_unit,
    hutchinson_trace,
    importance_sampling_trace,
    unit_vector_trace,
)
from .fitting import (
    LinearModel,
    PchipModel,
    eval_model,
    fit_linear,
    fit_pchip,
    fitted_residual,
    trace_from_fit,
)
from .matrix_core import (
    SparseMatrix,
    dense_inverse_diagonal,
    gen_heatflow,
    gen_poisson2d,
    matvec,
    read_matrix_market,
    write_matrix_market,
)
from .sampling import FitSampleSet, grow_fit_points, select_fit_points, trapezoid_split
from .solver import ColumnSolve, solve_columns

__version__ = "0.1.0"
