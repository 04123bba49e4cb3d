"""Exact diagonal entries of ``A^-1`` from solved unit columns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .approx_diag import IluFactors
from .matrix_core import ORACLE_CAP, SparseMatrix

DEFAULT_TOL = 1e-10
MAX_RESTARTS = 5


class SolverError(ArithmeticError):
    """Iteration cap hit or residual above tolerance."""

    def __init__(self, message, index=None, residual=None):
        super().__init__(message)
        self.index = index
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ColumnSolve:
    """``x = A^-1 e_index`` and its diagonal entry ``d = x[index]``."""

    index: int
    x: np.ndarray
    d: float
    residual_norm: float


class ColumnSolver:
    """Reusable solver for unit right-hand sides of one matrix.

    Parameters
    ----------
    A : SparseMatrix
    tol : float
        Absolute residual bound ``||A x - e_i||_2 <= tol``.
    precond : IluFactors, optional
        Used by the Krylov methods.
    method : {"auto", "direct", "cg", "bicgstab"}
        ``auto`` uses sparse direct LU up to ``direct_cap``, CG above it for
        symmetric matrices with a positive diagonal (unpreconditioned or with
        ILU(0) factors), and BiCGSTAB otherwise.

    Attributes
    ----------
    solve_count : int
        Number of unit columns solved so far.
    """

    def __init__(self, A: SparseMatrix, tol: float = DEFAULT_TOL,
                 precond: IluFactors | None = None, method: str = "auto",
                 maxiter: int | None = None, direct_cap: int = ORACLE_CAP):
        if tol < 1e-14:
            raise ValueError("tol must be >= 1e-14")
        self.A = A
        self.tol = float(tol)
        self.precond = precond
        self.maxiter = maxiter if maxiter is not None else 10 * A.n
        if method == "auto":
            if A.n <= direct_cap:
                method = "direct"
            elif (A.is_symmetric() and np.all(A.diagonal() > 0)
                  and (precond is None or precond.method == "ilu0")):
                # pivoted threshold factors are not symmetric, so CG would stall
                method = "cg"
            else:
                method = "bicgstab"
        if method not in ("direct", "cg", "bicgstab"):
            raise ValueError(f"unknown solver method {method!r}")
        self.method = method
        self.solve_count = 0
        self._a = A.to_scipy()
        self._lu = spla.splu(self._a.tocsc()) if method == "direct" else None

    def _krylov(self, b):
        # scipy's BiCGSTAB uses r0 as shadow residual; for b = e_i and an
        # ILU(0) preconditioner r[i] vanishes after one step (row i has no
        # fill) and the iteration breaks down. Restarting from the current
        # iterate gives a fresh shadow vector. CG with a nonsymmetric
        # preconditioner can stall; its restarts switch to BiCGSTAB.
        n = self.A.n
        M = None
        if self.precond is not None:
            M = spla.LinearOperator((n, n), matvec=self.precond.solve, dtype=np.float64)
        bnorm = float(np.linalg.norm(b))
        fn = spla.cg if self.method == "cg" else spla.bicgstab
        x = None
        for _ in range(MAX_RESTARTS + 1):
            x, info = fn(self._a, b, x0=x, rtol=self.tol / bnorm, atol=0.0,
                         maxiter=self.maxiter, M=M)
            if info == 0 and np.linalg.norm(self._a @ x - b) <= self.tol * bnorm:
                return x, 0
            if info > 0 and fn is spla.bicgstab:
                break
            fn = spla.bicgstab
        return x, info

    def apply_inverse(self, b) -> np.ndarray:
        """``A^-1 b`` for a general right-hand side, checked against ``tol``
        relative to ``||b||``."""
        b = np.asarray(b, dtype=np.float64)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self._lu is not None:
            x, info = self._lu.solve(b), 0
        else:
            x, info = self._krylov(b)
        res = float(np.linalg.norm(self._a @ x - b))
        if res > self.tol * bnorm or info != 0:
            raise SolverError(f"residual {res:.3e} above tol {self.tol:.1e} * ||b||",
                              residual=res)
        return x

    def solve(self, indices) -> list[ColumnSolve]:
        indices = [int(i) for i in indices]
        n = self.A.n
        if len(set(indices)) != len(indices):
            raise ValueError("indices must be distinct")
        for i in indices:
            if not 0 <= i < n:
                raise IndexError(f"index {i} out of range for order {n}")
        if not indices:
            return []
        if self._lu is not None:
            rhs = np.zeros((n, len(indices)))
            rhs[indices, np.arange(len(indices))] = 1.0
            X = self._lu.solve(rhs)
            cols = [X[:, k] for k in range(len(indices))]
            infos = [0] * len(indices)
        else:
            cols, infos = [], []
            for i in indices:
                e = np.zeros(n)
                e[i] = 1.0
                x, info = self._krylov(e)
                cols.append(x)
                infos.append(info)
        out = []
        for i, x, info in zip(indices, cols, infos):
            r = self._a @ x
            r[i] -= 1.0
            res = float(np.linalg.norm(r))
            if res > self.tol or info != 0:
                raise SolverError(
                    f"column {i}: residual {res:.3e} above tol {self.tol:.1e}"
                    + (f" (iteration cap, info={info})" if info > 0 else ""),
                    index=i, residual=res)
            x = np.ascontiguousarray(x)
            x.setflags(write=False)
            out.append(ColumnSolve(i, x, float(x[i]), res))
        self.solve_count += len(out)
        return out


def solve_columns(A: SparseMatrix, indices, tol: float = DEFAULT_TOL,
                  precond: IluFactors | None = None,
                  method: str = "auto") -> list[ColumnSolve]:
    """Solve ``A x_i = e_i`` for each index, in input order."""
    return ColumnSolver(A, tol=tol, precond=precond, method=method).solve(indices)
