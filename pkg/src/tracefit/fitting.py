"""Fitting models ``f`` with ``f(M) ~= D`` and the traces they imply."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .approx_diag import DiagApprox
from .sampling import FitSampleSet


class FitError(ValueError):
    """Degenerate fitting data."""


@dataclass(frozen=True)
class LinearModel:
    """``f(x) = b * x + c``."""

    b: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.b) and np.isfinite(self.c)):
            raise FitError("linear model coefficients must be finite")

    def __call__(self, x):
        return self.b * np.asarray(x, dtype=np.float64) + self.c


@dataclass(frozen=True, eq=False)
class PchipModel:
    """Monotone piecewise cubic Hermite interpolant.

    Outside ``[knots_x[0], knots_x[-1]]`` the end values are held constant.
    A single knot gives a constant model (only built on request by
    :func:`fit_pchip`).
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.knots_x, dtype=np.float64)
        if len(x) < 1 or np.any(np.diff(x) <= 0):
            raise FitError("knots_x must be strictly increasing")
        for name in ("knots_x", "knots_y", "derivs"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        kx, ky, kd = self.knots_x, self.knots_y, self.derivs
        if len(kx) == 1:
            return np.full_like(x, ky[0])
        k = np.clip(np.searchsorted(kx, x, side="right") - 1, 0, len(kx) - 2)
        h = kx[k + 1] - kx[k]
        delta = (ky[k + 1] - ky[k]) / h
        c2 = (3.0 * delta - 2.0 * kd[k] - kd[k + 1]) / h
        c3 = (kd[k] - 2.0 * delta + kd[k + 1]) / (h * h)
        s = x - kx[k]
        out = ky[k] + s * (kd[k] + s * (c2 + s * c3))
        out = np.where(x <= kx[0], ky[0], out)
        return np.where(x >= kx[-1], ky[-1], out)


FitModel = Union[LinearModel, PchipModel]


def _endpoint_slope(h1, h2, del1, del2):
    # one-sided three-point estimate, clipped to keep the end piece monotone
    d = ((2.0 * h1 + h2) * del1 - h1 * del2) / (h1 + h2)
    if np.sign(d) != np.sign(del1):
        return 0.0
    if np.sign(del1) != np.sign(del2) and abs(d) > abs(3.0 * del1):
        return 3.0 * del1
    return d


def pchip_slopes(x, y) -> np.ndarray:
    """Fritsch-Carlson derivatives at the knots.

    Interior slopes are the weighted harmonic mean of the adjacent secants,
    or zero where the secants differ in sign or one vanishes.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    w1 = 2.0 * h[1:] + h[:-1]
    w2 = h[1:] + 2.0 * h[:-1]
    same = np.sign(delta[:-1]) * np.sign(delta[1:]) > 0
    # a vanishing secant sends its term to inf and the mean to 0, the right limit
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        hm = (w1 + w2) / (w1 / delta[:-1] + w2 / delta[1:])
    d[1:-1] = np.where(same, hm, 0.0)
    d[0] = _endpoint_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _endpoint_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def fit_linear(M_vals, D_vals) -> LinearModel:
    """Least-squares ``(b, c)`` minimizing ``||D - (b M + c)||_2``."""
    M_vals = np.asarray(M_vals, dtype=np.float64)
    D_vals = np.asarray(D_vals, dtype=np.float64)
    if M_vals.shape != D_vals.shape or len(M_vals) < 2:
        raise FitError("need at least two matching (M, D) samples")
    if np.all(M_vals == M_vals[0]):
        raise FitError("all M values are equal; linear fit is rank deficient")
    design = np.column_stack([M_vals, np.ones_like(M_vals)])
    (b, c), *_ = np.linalg.lstsq(design, D_vals, rcond=None)
    return LinearModel(float(b), float(c))


def pchip_knots(approx: DiagApprox, samples: FitSampleSet, D_vals):
    """Deduplicated ``(x, y)`` knots; the first of equal ``M`` values wins."""
    D_vals = np.asarray(D_vals, dtype=np.float64)
    if len(D_vals) != len(samples):
        raise FitError("D_vals must align with the sample set")
    order = np.argsort(samples.s_fit_sorted, kind="stable")
    x = approx.M_sorted[samples.s_fit_sorted[order]]
    y = D_vals[order]
    keep = np.concatenate([[True], np.diff(x) > 0])
    return x[keep], y[keep]


def fit_pchip(approx: DiagApprox, samples: FitSampleSet, D_vals,
              allow_constant: bool = False) -> PchipModel:
    """PCHIP through ``(M_hat[s], D[J[s]])`` for the selected positions ``s``.

    ``D_vals`` is aligned with ``samples.s_fit_original``. With fewer than two
    distinct knots a :class:`FitError` is raised unless ``allow_constant``.
    """
    x, y = pchip_knots(approx, samples, D_vals)
    if len(x) < 2:
        if allow_constant and len(x) == 1:
            return PchipModel(x, y, np.zeros(1))
        raise FitError("PCHIP needs at least two distinct M values")
    return PchipModel(x, y, pchip_slopes(x, y))


def eval_model(f: FitModel, x):
    """Evaluate ``f`` at a scalar or array."""
    out = f(x)
    return float(out) if np.ndim(out) == 0 else out


def trace_from_fit(f: FitModel, M) -> float:
    """``sum_i f(M_i)``."""
    return float(np.sum(f(np.asarray(M, dtype=np.float64))))


def fitted_residual(f: FitModel, M, D_probe, probe_idx, fit_idx=()) -> np.ndarray:
    """``D_i - f(M_i)`` at probe indices, which must avoid the fitting set."""
    probe_idx = np.asarray(probe_idx, dtype=np.int64)
    if np.intersect1d(probe_idx, np.asarray(fit_idx, dtype=np.int64)).size:
        raise ValueError("probe indices overlap the fitting set")
    D_probe = np.asarray(D_probe, dtype=np.float64)
    if D_probe.shape != probe_idx.shape:
        raise ValueError("D_probe must align with probe_idx")
    M = np.asarray(M, dtype=np.float64)
    return D_probe - f(M[probe_idx])
