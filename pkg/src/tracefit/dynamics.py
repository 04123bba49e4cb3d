"""The incremental fitting loop with variance and trace-error monitoring.

At every step ``i`` (from 5 up to ``max_pts``) the fitting set grows to
``i`` indices, only the new columns are solved, the model is refit, and the
run records the fitted trace, three Monte Carlo variance estimates and the
monitored relative trace error.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx_diag import (
    IluFactors,
    LowRankFactors,
    diag_from_lowrank,
    diag_inverse_from_ilu,
    extreme_eigenvalues,
    ilu_factorize,
    smallest_singular_triplets,
    variational_bounds,
)
from .estimators import exact_variance_hutchinson
from .fitting import FitError, LinearModel, fit_linear, fit_pchip, fitted_residual, trace_from_fit
from .matrix_core import SparseMatrix, dense_inverse
from .sampling import grow_fit_points, select_fit_points
from .solver import ColumnSolver

log = logging.getLogger(__name__)

FIRST_STEP = 5
FOLLOWUPS = ("fitted-trace", "mc-unit-on-Efit", "mc-hutch-on-E", "mc-hutch-on-Ainv")


@dataclass(frozen=True)
class DynamicConfig:
    approx: str = "svd"
    model: str = "pchip"
    max_pts: int = 20
    s_mc: int = 10
    tol: float = 1e-10
    droptol: float = 1e-2
    ilu_method: str = "ilutp"
    bounds_side: str = "lower"
    rel_threshold: float = 1e-3
    seed: int = 0
    oracle: bool = False
    target_rel_error: float | None = None

    def validate(self, n: int | None = None) -> None:
        if self.approx not in ("ilu", "svd", "bounds"):
            raise ValueError(f"approx must be ilu, svd or bounds, got {self.approx!r}")
        if self.model not in ("linear", "pchip"):
            raise ValueError(f"model must be linear or pchip, got {self.model!r}")
        if self.ilu_method not in ("ilutp", "ilu0"):
            raise ValueError(f"ilu_method must be ilutp or ilu0, got {self.ilu_method!r}")
        if self.bounds_side not in ("lower", "upper"):
            raise ValueError("bounds_side must be lower or upper")
        if self.max_pts < FIRST_STEP:
            raise ValueError(f"max_pts must be >= {FIRST_STEP}")
        if self.s_mc < 2:
            raise ValueError("s_mc must be >= 2")
        if not self.tol > 0 or self.droptol < 0 or self.rel_threshold < 0:
            raise ValueError("tol must be positive, droptol and rel_threshold nonnegative")
        if n is not None and self.max_pts + self.s_mc > n:
            raise ValueError(f"max_pts + s_mc = {self.max_pts + self.s_mc} exceeds order {n}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepRecord:
    """One step of the loop.

    The three ``var_*`` values follow the estimator formulas as printed,
    each for its own sample count; the ``unit_var_*`` values are the same
    estimates scaled to a single sample, which is what the follow-up choice
    compares.
    """

    step: int
    k: int
    trace_fit: float
    var_hutch_ainv: float
    var_hutch_e: float
    var_unit_efit: float
    trace_err_est: float | None
    trace_err_actual: float | None
    unit_var_hutch_ainv: float
    unit_var_hutch_e: float
    unit_var_unit_efit: float
    fit_indices: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class DynamicTrajectory:
    records: tuple
    config: dict
    chosen_followup: str | None
    status: str = "complete"
    error: str | None = None
    solve_count: int = 0
    mc_indices: tuple = ()
    trace_exact: float | None = None

    @property
    def final(self) -> StepRecord | None:
        return self.records[-1] if self.records else None


def trace_error_sequence(trace_fits, first_step: int = FIRST_STEP) -> list[float]:
    """Monitored relative trace errors for steps ``first_step + 1`` onward.

    ``trace_fits[0]`` is the fitted trace at ``first_step``. The first error
    is the plain relative change. Later, the relative change is accepted
    when it is at least ``((i-1)/i)^4`` times the previous error (the most a
    cubic fit can improve from ``i-1`` to ``i`` points); otherwise the
    previous error decays by ``((i-1)/i)^(9/4)``.
    """
    T = [float(t) for t in trace_fits]
    if len(T) < 2:
        raise ValueError("need at least two fitted traces")
    if not np.all(np.isfinite(T)):
        raise ValueError("fitted traces must be finite")
    errs: list[float] = []
    for idx in range(1, len(T)):
        i = first_step + idx
        if idx == 1:
            if T[0] == 0:
                raise ZeroDivisionError(f"fitted trace at step {first_step} is zero")
            errs.append(abs(T[1] - T[0]) / abs(T[0]))
            continue
        if T[idx] == 0:
            raise ZeroDivisionError(f"fitted trace at step {i} is zero")
        temp = abs(T[idx] - T[idx - 1]) / abs(T[idx])
        prev = errs[-1]
        if prev == 0.0:
            accept = temp > 0.0
        else:
            accept = temp / prev >= ((i - 1) / i) ** 4
        errs.append(temp if accept else prev * ((i - 1) / i) ** (9 / 4))
    return errs


def monitor_trace_error(trace_fits, first_step: int = FIRST_STEP) -> float:
    """Monitored relative trace error at the last step of ``trace_fits``."""
    return trace_error_sequence(trace_fits, first_step)[-1]


def _hutch_frob_estimate(cols, n: int) -> float:
    s = len(cols)
    return 2.0 * n / s**2 * float(sum(float(x @ x) - x[i] ** 2 for i, x in cols))


def estimate_variances(columns, residual_cols, D_probe, probe_idx, f, M, n: int,
                       fit_idx=()):
    """Variance estimates from solved columns.

    Parameters
    ----------
    columns : sequence of ColumnSolve
        Solved columns for the fitting and probe indices together.
    residual_cols : sequence of ndarray
        ``E[:, i]`` for the same indices, in the same order.
    D_probe, probe_idx : array_like
        Exact diagonal values at the probe indices (disjoint from the fit).
    f : FitModel
    M : ndarray
        Approximate diagonal.
    n : int
        Matrix order.

    Returns
    -------
    tuple of float
        ``(2N/s^2) sum(||x_i||^2 - D_i^2)``, the same on ``E``, and
        ``N^2/(s_mc - 1)`` times the unbiased sample variance of the fit
        residual on the probes.
    """
    if len(probe_idx) < 2:
        raise ValueError("at least two probe indices are needed")
    if len(residual_cols) != len(columns):
        raise ValueError("residual columns must align with solved columns")
    v1 = _hutch_frob_estimate([(c.index, c.x) for c in columns], n)
    v2 = _hutch_frob_estimate([(c.index, e) for c, e in zip(columns, residual_cols)], n)
    efit = fitted_residual(f, M, D_probe, probe_idx, fit_idx)
    s_mc = len(efit)
    v3 = n**2 / (s_mc - 1) * float(np.var(efit, ddof=1))
    return v1, v2, v3


def _fit_model(kind, approx, fit_set, d_fit):
    if kind == "pchip":
        return fit_pchip(approx, fit_set, d_fit, allow_constant=True)
    try:
        return fit_linear(approx.M[fit_set.s_fit_original], d_fit)
    except FitError:
        return LinearModel(0.0, float(np.mean(d_fit)))


class _Approximation:
    """Current ``M`` and the matching ``Z^-1`` columns for one source."""

    def __init__(self, A: SparseMatrix, cfg: DynamicConfig):
        self.A = A
        self.kind = cfg.approx
        self.ilu = None
        self.lowrank = None
        self._ilu_cols: dict[int, np.ndarray] = {}
        if cfg.approx == "ilu":
            self.ilu = ilu_factorize(A, cfg.droptol, cfg.ilu_method)
            self.diag = diag_inverse_from_ilu(self.ilu)
        elif cfg.approx == "svd":
            k = min(2 * cfg.max_pts, A.n)
            self.lowrank = smallest_singular_triplets(A, k)
        else:
            lam_min, lam_max = extreme_eigenvalues(A)
            lower, upper = variational_bounds(A, lam_min, lam_max)
            self.diag = lower if cfg.bounds_side == "lower" else upper
        self._current = None

    @property
    def precond(self) -> IluFactors | None:
        return self.ilu

    def at_step(self, i: int):
        if self.lowrank is not None:
            self._current = self.lowrank.truncate(min(2 * i, self.lowrank.k))
            self.diag = diag_from_lowrank(self._current)
        return self.diag

    def zinv_columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        n = self.A.n
        if self.ilu is not None:
            for i in idx:
                if int(i) not in self._ilu_cols:
                    e = np.zeros(n)
                    e[i] = 1.0
                    self._ilu_cols[int(i)] = self.ilu.solve(e)
            return np.column_stack([self._ilu_cols[int(i)] for i in idx])
        if self._current is not None:
            f: LowRankFactors = self._current
            return f.V_vecs @ (f.U_vecs[idx] / f.sigma).T
        # bounds: Z^-1 is taken as diag(M)
        out = np.zeros((n, len(idx)))
        out[idx, np.arange(len(idx))] = self.diag.M[idx]
        return out


def _choose_followup(rec: StepRecord, cfg: DynamicConfig) -> str:
    if (cfg.target_rel_error is not None and rec.trace_err_est is not None
            and rec.trace_err_est <= cfg.target_rel_error):
        return "fitted-trace"
    cands = [
        (rec.unit_var_unit_efit, "mc-unit-on-Efit"),
        (rec.unit_var_hutch_e, "mc-hutch-on-E"),
        (rec.unit_var_hutch_ainv, "mc-hutch-on-Ainv"),
    ]
    return min(cands, key=lambda c: c[0])[1]


def run_dynamic(A: SparseMatrix, cfg: DynamicConfig, D_exact=None) -> DynamicTrajectory:
    """Run the incremental fitting loop on ``A``.

    With ``cfg.oracle`` (or an explicit ``D_exact``) the actual relative
    trace error is recorded next to the monitored one. A failure inside the
    loop returns the steps completed so far with ``status="failed"``.
    """
    n = A.n
    cfg.validate(n)
    if D_exact is None and cfg.oracle:
        D_exact = np.diagonal(dense_inverse(A)).copy()
    trace_exact = float(np.sum(D_exact)) if D_exact is not None else None

    solver = None
    solved: dict[int, object] = {}

    def ensure(indices):
        new = [int(j) for j in indices if int(j) not in solved]
        for col in solver.solve(new):
            solved[col.index] = col

    records: list[StepRecord] = []
    traces: list[float] = []
    status, error = "complete", None
    mc_idx = np.array([], dtype=np.int64)
    try:
        approx = _Approximation(A, cfg)
        solver = ColumnSolver(A, tol=cfg.tol, precond=approx.precond)
        diag = approx.at_step(FIRST_STEP)
        fit_set = select_fit_points(diag, FIRST_STEP, cfg.rel_threshold)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        pool = np.setdiff1d(np.arange(n), fit_set.s_fit_original)
        mc_idx = np.sort(rng.choice(pool, size=cfg.s_mc, replace=False))
        ensure(mc_idx)
        for i in range(FIRST_STEP, cfg.max_pts + 1):
            if i > FIRST_STEP:
                diag = approx.at_step(i)
                fit_set = grow_fit_points(fit_set, diag, i, cfg.rel_threshold)
            fit_idx = fit_set.s_fit_original
            ensure(fit_idx)
            d_fit = np.array([solved[int(j)].d for j in fit_idx])
            model = _fit_model(cfg.model, diag, fit_set, d_fit)
            T = trace_from_fit(model, diag.M)
            traces.append(T)

            probes = np.setdiff1d(mc_idx, fit_idx)
            used = np.union1d(fit_idx, mc_idx)
            cols = [solved[int(j)] for j in used]
            X = np.column_stack([c.x for c in cols])
            E = X - approx.zinv_columns(used)
            d_probe = np.array([solved[int(j)].d for j in probes])
            v1, v2, v3 = estimate_variances(cols, list(E.T), d_probe, probes, model,
                                            diag.M, n, fit_idx)
            s = len(used)
            err_est = monitor_trace_error(traces) if len(traces) > 1 else None
            err_act = (abs(T - trace_exact) / abs(trace_exact)
                       if trace_exact is not None else None)
            rec = StepRecord(
                step=i, k=len(fit_idx), trace_fit=T,
                var_hutch_ainv=v1, var_hutch_e=v2, var_unit_efit=v3,
                trace_err_est=err_est, trace_err_actual=err_act,
                unit_var_hutch_ainv=v1 * s, unit_var_hutch_e=v2 * s,
                unit_var_unit_efit=v3 * (len(probes) - 1),
                fit_indices=tuple(int(j) for j in fit_idx),
            )
            records.append(rec)
            log.debug("step %d: T=%.10g err_est=%s", i, T, err_est)
    except Exception as exc:  # partial trajectory is still returned
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        log.error("dynamic run aborted: %s", error)

    chosen = _choose_followup(records[-1], cfg) if records and status == "complete" else None
    return DynamicTrajectory(
        records=tuple(records), config=cfg.to_dict(), chosen_followup=chosen,
        status=status, error=error, solve_count=solver.solve_count if solver else 0,
        mc_indices=tuple(int(j) for j in mc_idx), trace_exact=trace_exact,
    )


def fitted_trace_once(A: SparseMatrix, source: str, fit_pts: int = 20, *,
                      droptol: float = 1e-2, ilu_method: str = "ilutp",
                      bounds_side: str = "lower", solver: ColumnSolver | None = None):
    """Single-shot PCHIP trace with ``fit_pts`` points for one source.

    Returns ``(trace, Z^-1 dense or None)``; the low-rank source uses
    ``2 * fit_pts`` triplets.
    """
    if source == "ilu":
        f = ilu_factorize(A, droptol, ilu_method)
        diag = diag_inverse_from_ilu(f)
        zinv = f.solve(np.eye(A.n))
    elif source == "svd":
        f = smallest_singular_triplets(A, min(2 * fit_pts, A.n))
        diag = diag_from_lowrank(f)
        zinv = (f.V_vecs / f.sigma) @ f.U_vecs.T
    elif source == "bounds":
        lower, upper = variational_bounds(A, *extreme_eigenvalues(A))
        diag = lower if bounds_side == "lower" else upper
        zinv = None
    else:
        raise ValueError(f"unknown source {source!r}")
    fit_set = select_fit_points(diag, fit_pts)
    solver = solver or ColumnSolver(A)
    d_fit = np.array([c.d for c in solver.solve(fit_set.s_fit_original)])
    model = fit_pchip(diag, fit_set, d_fit, allow_constant=True)
    return trace_from_fit(model, diag.M), zinv


def compare_table(A: SparseMatrix, s: int = 20, fit_pts: int = 20, *,
                  droptol: float = 1e-2, ilu_method: str = "ilutp",
                  Ainv=None) -> dict:
    """Relative errors of the fitted trace against Rademacher Monte Carlo.

    The Monte Carlo columns are one standard deviation at ``s`` samples
    divided by the exact trace. The bounds source is skipped (NaN) for
    nonsymmetric matrices.
    """
    if Ainv is None:
        Ainv = dense_inverse(A)
    tr = float(np.trace(Ainv))
    scale = abs(tr) if tr != 0 else 1.0
    row = {"n": A.n, "trace": tr,
           "hutch_ainv": np.sqrt(max(exact_variance_hutchinson(Ainv, s), 0.0)) / scale}
    solver = ColumnSolver(A)
    for source in ("ilu", "svd"):
        T, zinv = fitted_trace_once(A, source, fit_pts, droptol=droptol,
                                    ilu_method=ilu_method, solver=solver)
        row[f"{source}_pchip"] = abs(T - tr) / scale
        var_e = exact_variance_hutchinson(Ainv - zinv, s)
        row[f"{source}_hutch_e"] = np.sqrt(max(var_e, 0.0)) / scale
    if A.is_symmetric():
        T, _ = fitted_trace_once(A, "bounds", fit_pts, solver=solver)
        row["bounds_pchip"] = abs(T - tr) / scale
    else:
        row["bounds_pchip"] = float("nan")
    return row
