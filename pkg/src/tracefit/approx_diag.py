"""Approximations ``M`` of ``diag(A^-1)`` and the residual ``E = A^-1 - Z^-1``.

Three sources are provided:

* incomplete LU factors, ``Z^-1 = Q (LU)^-1`` with ``Q`` a column permutation,
* the ``k`` smallest singular triplets, ``Z^-1 = V diag(1/sigma) U^T``,
* elementwise variational bounds from extreme eigenvalue estimates.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .matrix_core import SparseMatrix

DENSE_SVD_CAP = 1000
SOURCES = ("ilu", "svd", "bounds-lower", "bounds-upper")


class FactorizationError(ArithmeticError):
    """Zero pivot or otherwise failed factorization."""


class ConvergenceError(ArithmeticError):
    """Singular triplets did not reach the requested residual."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class IluFactors:
    """Incomplete factors with ``A[:, perm] ~= L @ U``.

    ``L`` is unit lower triangular with its ones stored explicitly and ``U``
    is upper triangular in permuted column coordinates.
    """

    L: SparseMatrix
    U: SparseMatrix
    perm: np.ndarray
    droptol: float
    method: str = "ilutp"
    iperm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        iperm = np.empty_like(perm)
        iperm[perm] = np.arange(len(perm))
        perm.setflags(write=False)
        iperm.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "iperm", iperm)
        if np.any(self.U.diagonal() == 0):
            raise FactorizationError("U has a zero diagonal entry")

    @property
    def n(self) -> int:
        return self.L.n

    def solve(self, b) -> np.ndarray:
        """Apply ``Z^-1`` to a vector (or the columns of a 2-D array)."""
        L, U = self.L, self.U
        y = _kernels.upper_solve(
            U.row_ptr, U.col_idx, U.values,
            _kernels.lower_solve(L.row_ptr, L.col_idx, L.values, b),
        )
        out = np.empty_like(y)
        out[self.perm] = y
        return out


@dataclass(frozen=True, eq=False)
class LowRankFactors:
    """The ``k`` smallest singular triplets of ``A``, sigma ascending."""

    sigma: np.ndarray
    U_vecs: np.ndarray
    V_vecs: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 1 or len(sigma) == 0:
            raise ValueError("at least one singular triplet is required")
        if np.any(sigma <= 0) or np.any(np.diff(sigma) < 0):
            raise ValueError("sigma must be positive and ascending")
        if self.U_vecs.shape != self.V_vecs.shape or self.U_vecs.shape[1] != len(sigma):
            raise ValueError("singular vector blocks must be n x k")
        object.__setattr__(self, "sigma", sigma)

    @property
    def k(self) -> int:
        return len(self.sigma)

    @property
    def n(self) -> int:
        return self.U_vecs.shape[0]

    def truncate(self, k: int) -> "LowRankFactors":
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate {self.k} triplets to {k}")
        return LowRankFactors(self.sigma[:k], self.U_vecs[:, :k], self.V_vecs[:, :k])

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        coef = self.U_vecs.T @ b
        coef = coef / (self.sigma if b.ndim == 1 else self.sigma[:, None])
        return self.V_vecs @ coef


@dataclass(frozen=True, eq=False)
class DiagApprox:
    """Approximate diagonal ``M`` with its stable ascending sort permutation.

    ``J[p]`` is the original index holding the p-th smallest value, so
    ``M[J]`` is nondecreasing; ``Jinv`` maps original index -> sorted position.
    """

    M: np.ndarray
    source: str
    J: np.ndarray = field(init=False)
    Jinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        M = np.array(self.M, dtype=np.float64)
        if M.ndim != 1 or not np.all(np.isfinite(M)):
            raise ValueError("M must be a finite vector")
        J = np.argsort(M, kind="stable")
        Jinv = np.empty_like(J)
        Jinv[J] = np.arange(len(J))
        for arr in (M, J, Jinv):
            arr.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "Jinv", Jinv)

    @property
    def n(self) -> int:
        return len(self.M)

    @property
    def M_sorted(self) -> np.ndarray:
        return self.M[self.J]


def _split_ilu0(A: SparseMatrix, lu: np.ndarray):
    csr = sp.csr_matrix((lu, A.col_idx, A.row_ptr), shape=A.shape)
    L = sp.tril(csr, k=-1, format="csr") + sp.identity(A.n, format="csr")
    U = sp.triu(csr, k=0, format="csr")
    return SparseMatrix.from_scipy(L), SparseMatrix.from_scipy(U)


def _ilutp(A: SparseMatrix, droptol: float, pivot_threshold: float):
    """Row-wise threshold ILU with column pivoting (IKJ ordering).

    Entries below ``droptol * ||A[i, :]||_2`` are dropped from row i of both
    factors (the pivot is never dropped). The pivot of row i is swapped with
    the largest remaining entry when ``|w_ii| < pivot_threshold * max|w_ij|``.
    """
    n = A.n
    rp, ci, vals = A.row_ptr, A.col_idx, A.values
    perm = list(range(n))
    iperm = list(range(n))
    u_diag = [0.0] * n
    u_off: list[dict[int, float]] = [None] * n  # original column -> value
    l_rows: list[dict[int, float]] = [None] * n  # step -> multiplier

    for i in range(n):
        lo, hi = rp[i], rp[i + 1]
        w = {int(c): float(v) for c, v in zip(ci[lo:hi], vals[lo:hi])}
        tau = droptol * float(np.linalg.norm(vals[lo:hi]))
        heap = [iperm[c] for c in w if iperm[c] < i]
        heapq.heapify(heap)
        queued = set(heap)
        lrow: dict[int, float] = {}
        while heap:
            k = heapq.heappop(heap)
            lik = w.pop(perm[k]) / u_diag[k]
            if lik == 0.0 or abs(lik) < tau:
                continue
            lrow[k] = lik
            for c, u in u_off[k].items():
                if c in w:
                    w[c] -= lik * u
                else:
                    w[c] = -lik * u
                    p = iperm[c]
                    if p < i and p not in queued:
                        heapq.heappush(heap, p)
                        queued.add(p)
        if not w:
            raise FactorizationError(f"zero pivot in row {i}")
        # pivot choice: largest magnitude, ties to the smallest position
        best_c = min(w, key=lambda c: (-abs(w[c]), iperm[c]))
        diag_c = perm[i]
        if abs(w.get(diag_c, 0.0)) < pivot_threshold * abs(w[best_c]):
            p = iperm[best_c]
            perm[i], perm[p] = perm[p], perm[i]
            iperm[perm[i]], iperm[perm[p]] = i, p
            diag_c = best_c
        piv = w.pop(diag_c, 0.0)
        if piv == 0.0:
            raise FactorizationError(f"zero pivot in row {i}")
        u_diag[i] = piv
        u_off[i] = {c: v for c, v in w.items() if v != 0.0 and abs(v) >= tau}
        l_rows[i] = lrow

    l_r, l_c, l_v, u_r, u_c, u_v = [], [], [], [], [], []
    for i in range(n):
        for k, v in l_rows[i].items():
            l_r.append(i); l_c.append(k); l_v.append(v)
        l_r.append(i); l_c.append(i); l_v.append(1.0)
        u_r.append(i); u_c.append(i); u_v.append(u_diag[i])
        for c, v in u_off[i].items():
            u_r.append(i); u_c.append(iperm[c]); u_v.append(v)
    L = sp.csr_matrix((l_v, (l_r, l_c)), shape=(n, n))
    U = sp.csr_matrix((u_v, (u_r, u_c)), shape=(n, n))
    return SparseMatrix.from_scipy(L), SparseMatrix.from_scipy(U), np.array(perm)


def ilu_factorize(A: SparseMatrix, droptol: float = 1e-2, method: str = "ilutp",
                  pivot_threshold: float = 1.0) -> IluFactors:
    """Incomplete LU factorization of ``A``.

    Parameters
    ----------
    A : SparseMatrix
    droptol : float
        Relative drop tolerance for ``method="ilutp"``. ``0`` keeps every
        entry and yields a complete (pivoted) LU.
    method : {"ilutp", "ilu0"}
        Threshold factorization with column pivoting, or zero fill-in on the
        sparsity pattern of ``A`` without pivoting.
    pivot_threshold : float
        Column pivoting tolerance for ``ilutp``; ``0`` disables pivoting.

    Raises
    ------
    FactorizationError
        On a zero pivot.
    """
    if droptol < 0:
        raise ValueError("droptol must be nonnegative")
    if method == "ilu0":
        try:
            lu = _kernels.ilu0(A.n, A.row_ptr, A.col_idx, A.values)
        except ZeroDivisionError as exc:
            raise FactorizationError(str(exc)) from exc
        L, U = _split_ilu0(A, lu)
        perm = np.arange(A.n)
    elif method == "ilutp":
        L, U, perm = _ilutp(A, float(droptol), float(pivot_threshold))
    else:
        raise ValueError(f"unknown ILU method {method!r}")
    return IluFactors(L, U, perm, float(droptol), method)


def diag_inverse_from_ilu(f: IluFactors) -> DiagApprox:
    """``M_i = (Z^-1)_ii`` from two sparse triangular solves per index."""
    L, U = f.L, f.U
    M = _kernels.ilu_inverse_diagonal(
        L.row_ptr, L.col_idx, L.values, U.row_ptr, U.col_idx, U.values, f.iperm
    )
    if not np.all(np.isfinite(M)):
        raise FactorizationError("U is numerically singular")
    return DiagApprox(M, "ilu")


def _sigma_max(A: SparseMatrix, symmetric: bool) -> float:
    a = A.to_scipy()
    v0 = np.ones(A.n)
    if A.n <= 2:
        return float(np.linalg.norm(A.toarray(), 2))
    if symmetric:
        lam = spla.eigsh(a, k=1, which="LM", v0=v0, tol=1e-8, return_eigenvectors=False)
        return float(abs(lam[0]))
    s = spla.svds(a, k=1, which="LM", v0=v0, tol=1e-8, return_singular_vectors=False)
    return float(s[0])


def smallest_singular_triplets(A: SparseMatrix, k: int, method: str = "auto",
                               tol: float = 1e-6,
                               dense_cap: int = DENSE_SVD_CAP) -> LowRankFactors:
    """The ``k`` smallest singular triplets of ``A``.

    ``method="dense"`` uses a full LAPACK SVD; ``"iterative"`` runs
    shift-invert Lanczos (ARPACK) around zero, on ``A`` itself when it is
    symmetric and on ``A^T A`` otherwise. ``"auto"`` picks dense up to
    ``dense_cap``.

    Raises
    ------
    ConvergenceError
        If any residual ``||A v_j - sigma_j u_j||`` or
        ``||A^T u_j - sigma_j v_j||`` exceeds ``tol * sigma_max``.
    """
    n = A.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if method == "auto":
        method = "dense" if (n <= dense_cap or k >= n - 1) else "iterative"
    symmetric = A.is_symmetric()
    if method == "dense":
        u, s, vt = np.linalg.svd(A.toarray())
        sel = np.arange(n - 1, n - 1 - k, -1)
        sigma, U_vecs, V_vecs = s[sel], u[:, sel], vt[sel].T
        smax = float(s[0])
    elif method == "iterative":
        a = A.to_scipy().tocsc()
        lu = spla.splu(a)
        v0 = np.ones(n) / np.sqrt(n)
        if symmetric:
            opinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=np.float64)
            lam, vecs = spla.eigsh(a, k=k, sigma=0.0, which="LM", OPinv=opinv, v0=v0)
            order = np.argsort(np.abs(lam), kind="stable")
            lam, vecs = lam[order], vecs[:, order]
            sigma = np.abs(lam)
            V_vecs = vecs
            U_vecs = vecs * np.sign(lam)
        else:
            ata = spla.LinearOperator((n, n), matvec=lambda x: a.T @ (a @ x),
                                      dtype=np.float64)
            opinv = spla.LinearOperator(
                (n, n), matvec=lambda x: lu.solve(lu.solve(x, trans="T")),
                dtype=np.float64)
            lam, vecs = spla.eigsh(ata, k=k, sigma=0.0, which="LM", OPinv=opinv, v0=v0)
            order = np.argsort(lam, kind="stable")
            sigma = np.sqrt(np.maximum(lam[order], 0.0))
            V_vecs = vecs[:, order]
            U_vecs = (a @ V_vecs) / sigma
            U_vecs /= np.linalg.norm(U_vecs, axis=0)
        smax = _sigma_max(A, symmetric)
    else:
        raise ValueError(f"unknown method {method!r}")

    if np.any(sigma <= 0):
        raise ConvergenceError("matrix is singular to working precision")
    a = A.to_scipy()
    res = np.maximum(
        np.linalg.norm(a @ V_vecs - U_vecs * sigma, axis=0),
        np.linalg.norm(a.T @ U_vecs - V_vecs * sigma, axis=0),
    )
    if np.any(res > tol * smax):
        raise ConvergenceError(
            f"singular triplets did not converge: max residual {res.max():.3e} "
            f"> {tol:g} * sigma_max", residuals=res)
    return LowRankFactors(np.ascontiguousarray(sigma), np.ascontiguousarray(U_vecs),
                          np.ascontiguousarray(V_vecs))


def diag_from_lowrank(f: LowRankFactors) -> DiagApprox:
    """``M_i = sum_j V[i, j] U[i, j] / sigma_j``."""
    return DiagApprox((f.V_vecs * f.U_vecs) @ (1.0 / f.sigma), "svd")


def variational_bounds(A: SparseMatrix, lambda_min: float, lambda_max: float):
    """Lower and upper elementwise bounds on ``diag(A^-1)`` for symmetric ``A``.

    With ``s_ii = sum_k A_ik^2``::

        1/l_N + (l_N - a_ii)^2 / (l_N (l_N a_ii - s_ii))
            <= (A^-1)_ii <=
        1/l_1 - (a_ii - l_1)^2 / (l_1 (s_ii - l_1 a_ii))

    A correction whose numerator vanishes is taken as zero, which covers the
    0/0 case at rows that are eigenvectors for an extreme eigenvalue.
    """
    if not A.is_symmetric():
        raise ValueError("variational bounds require a symmetric matrix")
    if not 0 < lambda_min <= lambda_max:
        raise ValueError("need 0 < lambda_min <= lambda_max")
    a = A.to_scipy()
    d = a.diagonal()
    s = np.asarray(a.multiply(a).sum(axis=1)).ravel()
    lo_num = (lambda_max - d) ** 2
    hi_num = (d - lambda_min) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        lo_term = np.where(lo_num == 0, 0.0, lo_num / (lambda_max * (lambda_max * d - s)))
        hi_term = np.where(hi_num == 0, 0.0, hi_num / (lambda_min * (s - lambda_min * d)))
    lower = 1.0 / lambda_max + lo_term
    upper = 1.0 / lambda_min - hi_term
    return DiagApprox(lower, "bounds-lower"), DiagApprox(upper, "bounds-upper")


def extreme_eigenvalues(A: SparseMatrix) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    if A.n <= DENSE_SVD_CAP:
        ev = sla.eigvalsh(A.toarray())
        return float(ev[0]), float(ev[-1])
    a = A.to_scipy()
    v0 = np.ones(A.n)
    hi = spla.eigsh(a, k=1, which="LA", v0=v0, return_eigenvectors=False)[0]
    lo = spla.eigsh(a, k=1, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)[0]
    return float(lo), float(hi)


def residual_column(A: SparseMatrix, approx, x_i, i: int) -> np.ndarray:
    """Column ``E[:, i] = x_i - Z^-1 e_i`` given the solved ``x_i = A^-1 e_i``."""
    if not 0 <= i < A.n:
        raise IndexError(f"index {i} out of range for order {A.n}")
    x_i = np.asarray(x_i, dtype=np.float64)
    if isinstance(approx, IluFactors):
        e = np.zeros(A.n)
        e[i] = 1.0
        z = approx.solve(e)
    elif isinstance(approx, LowRankFactors):
        z = approx.V_vecs @ (approx.U_vecs[i] / approx.sigma)
    else:
        raise TypeError(f"unsupported approximation {type(approx).__name__}")
    return x_i - z


def dense_approx_inverse(approx) -> np.ndarray:
    """Dense ``Z^-1`` for oracle checks at small order."""
    if isinstance(approx, IluFactors):
        return approx.solve(np.eye(approx.n))
    if isinstance(approx, LowRankFactors):
        return (approx.V_vecs / approx.sigma) @ approx.U_vecs.T
    raise TypeError(f"unsupported approximation {type(approx).__name__}")
