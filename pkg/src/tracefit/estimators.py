"""Monte Carlo trace estimators and closed-form variances for checking them.

Every estimator takes an explicit integer seed. Sample ``j`` draws from its
own stream ``SeedSequence(seed).spawn(s)[j]``, so results do not depend on
evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fitting import FitModel

IS_SHIFT_EPS = 1e-8


@dataclass(frozen=True)
class EstimatorStats:
    """Estimate with the unbiased sample variance of the per-sample values
    (0 when only one sample was taken)."""

    estimate: float
    sample_count: int
    sample_variance: float
    seed: int | None


def _stats(values, seed, offset=0.0) -> EstimatorStats:
    values = np.asarray(values, dtype=np.float64)
    var = float(values.var(ddof=1)) if len(values) > 1 else 0.0
    return EstimatorStats(float(values.mean()) - offset, len(values), var, seed)


def _as_operator(op) -> Callable[[np.ndarray], np.ndarray]:
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda z: op @ z


def rademacher_vectors(n: int, s: int, seed: int) -> np.ndarray:
    """``s`` x ``n`` array of independent +-1 entries, one stream per row."""
    streams = np.random.SeedSequence(seed).spawn(s)
    out = np.empty((s, n))
    for j, ss in enumerate(streams):
        out[j] = np.random.default_rng(ss).integers(0, 2, size=n) * 2.0 - 1.0
    return out


def hutchinson_sample_values(op, Z) -> np.ndarray:
    """``z_j^T op(z_j)`` for each row ``z_j`` of ``Z``."""
    apply = _as_operator(op)
    return np.array([float(z @ apply(z)) for z in np.atleast_2d(Z)])


def hutchinson_trace(op, s: int, seed: int, n: int | None = None) -> EstimatorStats:
    """Rademacher estimate ``(1/s) sum_j z_j^T op(z_j)``.

    ``op`` is a matrix (dense or sparse) or a callable applying it, e.g. a
    linear solve for ``A^-1``; ``n`` is required for callables.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    if n is None:
        if not hasattr(op, "shape"):
            raise ValueError("n is required when op is a callable")
        n = op.shape[0]
    return _stats(hutchinson_sample_values(op, rademacher_vectors(n, s, seed)), seed)


def _diag_lookup(diag, idx) -> np.ndarray:
    if callable(diag):
        return np.array([float(diag(int(i))) for i in idx])
    return np.asarray(diag, dtype=np.float64)[idx]


def unit_sample_values(diag, n: int, idx) -> np.ndarray:
    """``N * D_i`` for each sampled index."""
    return n * _diag_lookup(diag, np.asarray(idx, dtype=np.int64))


def unit_vector_trace(diag, s: int, seed: int, n: int | None = None) -> EstimatorStats:
    """Unit-vector estimate ``(N/s) sum_j D_{i_j}``, indices drawn uniformly
    without replacement.

    ``diag`` is an array of diagonal values or a callable ``i -> D_i``
    (then ``n`` is required).
    """
    if n is None:
        if callable(diag):
            raise ValueError("n is required when diag is a callable")
        n = len(diag)
    if s < 1:
        raise ValueError("s must be >= 1")
    if s > n:
        raise ValueError(f"cannot draw {s} indices without replacement from {n}")
    idx = np.random.default_rng(np.random.SeedSequence(seed)).choice(n, size=s, replace=False)
    return _stats(unit_sample_values(diag, n, idx), seed)


def default_is_shift(M, D=None, eps: float = IS_SHIFT_EPS) -> float:
    """Smallest common shift making ``M`` (and a known ``D``) positive."""
    cands = [0.0, -float(np.min(M)) + eps]
    if D is not None:
        cands.append(-float(np.min(D)) + eps)
    return max(cands)


def importance_probabilities(M, shift: float = 0.0) -> np.ndarray:
    """``G_i = (M_i + shift) / sum(M + shift)``."""
    Ms = np.asarray(M, dtype=np.float64) + shift
    if np.any(Ms <= 0):
        raise ValueError("M must be positive after the shift")
    return Ms / Ms.sum()


def importance_sample_values(diag, M, idx, shift: float = 0.0) -> np.ndarray:
    """Shifted per-sample values ``Tr(M') D'_i / M'_i``.

    Their mean minus ``N * shift`` estimates ``Tr(D)``.
    """
    Ms = np.asarray(M, dtype=np.float64) + shift
    if np.any(Ms <= 0):
        raise ValueError("M must be positive after the shift")
    idx = np.asarray(idx, dtype=np.int64)
    Ds = _diag_lookup(diag, idx) + shift
    return Ms.sum() * Ds / Ms[idx]


def importance_sampling_trace(diag, M, s: int, seed: int,
                              shift: float | None = None) -> EstimatorStats:
    """Importance-sampling estimate with probabilities proportional to ``M``.

    Indices are drawn with replacement from ``G = M' / Tr(M')`` where
    ``M' = M + shift``. The shift defaults to :func:`default_is_shift`
    (using ``D`` only when it is given as an array) and is removed from the
    reported estimate.
    """
    M = np.asarray(M, dtype=np.float64)
    if s < 1:
        raise ValueError("s must be >= 1")
    if shift is None:
        shift = default_is_shift(M, None if callable(diag) else diag)
    G = importance_probabilities(M, shift)
    idx = np.random.default_rng(np.random.SeedSequence(seed)).choice(len(M), size=s, p=G)
    vals = importance_sample_values(diag, M, idx, shift)
    return _stats(vals, seed, offset=len(M) * shift)


def _symmetrize(B) -> np.ndarray:
    B = np.asarray(B, dtype=np.float64)
    return 0.5 * (B + B.T)


def exact_variance_hutchinson(B, s: int = 1) -> float:
    """``(2/s) (||B||_F^2 - sum_i B_ii^2)`` for the symmetric part of ``B``."""
    B = _symmetrize(B)
    return 2.0 / s * float(np.sum(B * B) - np.sum(np.diagonal(B) ** 2))


def exact_variance_unit(D, s: int = 1) -> float:
    """``(N^2/s) Var(D)`` with the population variance of ``D``."""
    D = np.asarray(D, dtype=np.float64)
    return len(D) ** 2 / s * float(D.var())


def exact_variance_residuals(Ainv, Zinv, f: FitModel, M, s: int = 1):
    """Closed-form variances on the residuals.

    Returns ``(hutchinson on E, unit vector on diag(E), unit vector on
    E_fit)`` with ``E = Ainv - Zinv`` and ``E_fit = diag(Ainv) - f(M)``.
    """
    Ainv = np.asarray(Ainv, dtype=np.float64)
    E = Ainv - np.asarray(Zinv, dtype=np.float64)
    efit = np.diagonal(Ainv) - f(np.asarray(M, dtype=np.float64))
    return (
        exact_variance_hutchinson(E, s),
        exact_variance_unit(np.diagonal(E), s),
        exact_variance_unit(efit, s),
    )
