"""CSR storage, Matrix Market I/O, products and the grid test matrices."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels

ORACLE_CAP = 5000


class MatrixMarketError(ValueError):
    """Raised for unreadable or unsupported Matrix Market input."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable square CSR matrix.

    Column indices are sorted within each row on construction and the
    arrays are made read-only, so instances can be shared freely.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        n = int(self.n)
        if n <= 0:
            raise ValueError(f"matrix order must be positive, got {n}")
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if row_ptr.shape != (n + 1,) or row_ptr[0] != 0:
            raise ValueError("row_ptr must have length n+1 and start at 0")
        if np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if col_idx.shape != values.shape or len(col_idx) != row_ptr[-1]:
            raise ValueError("col_idx/values length must equal row_ptr[-1]")
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= n):
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(values)):
            raise ValueError("matrix values must be finite")
        # sort columns within rows and reject duplicates
        rows = np.repeat(np.arange(n), np.diff(row_ptr))
        order = np.lexsort((col_idx, rows))
        col_idx = col_idx[order]
        values = values[order]
        same_row = rows[order][1:] == rows[order][:-1]
        if np.any(same_row & (col_idx[1:] == col_idx[:-1])):
            raise ValueError("duplicate column within a row")
        for arr in (row_ptr, col_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got shape {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        arr = np.asarray(arr, dtype=np.float64)
        return cls.from_scipy(sp.csr_matrix(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values.copy(), self.col_idx.copy(), self.row_ptr.copy()),
            shape=self.shape,
        )

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def is_symmetric(self, tol: float = 0.0) -> bool:
        a = self.to_scipy()
        diff = abs(a - a.T)
        return diff.nnz == 0 or diff.max() <= tol

    def __matmul__(self, x):
        return matvec(self, x)


def matvec(A: SparseMatrix, x) -> np.ndarray:
    """Exact CSR product ``A @ x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise ValueError(f"dimension mismatch: matrix order {A.n}, vector shape {x.shape}")
    return _kernels.csr_matvec(A.row_ptr, A.col_idx, A.values, x)


def read_matrix_market(path) -> SparseMatrix:
    """Read a real coordinate Matrix Market file.

    ``general`` and ``symmetric`` storage are supported; symmetric files are
    expanded to full storage. Repeated coordinates are summed.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    MatrixMarketError
        On malformed content, complex data, or a non-square matrix.
    """
    path = os.fspath(path)
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "%%MatrixMarket":
        raise MatrixMarketError(f"{path}: missing %%MatrixMarket header")
    obj, fmt, field, symmetry = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"{path}: only 'matrix coordinate' is supported")
    if field == "complex":
        raise MatrixMarketError(f"{path}: complex matrices are not supported")
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError(f"{path}: unsupported field '{field}'")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}: unsupported symmetry '{symmetry}'")

    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MatrixMarketError(f"{path}: missing size line")
    try:
        nrows, ncols, nnz = (int(tok) for tok in body[0].split())
    except ValueError as exc:
        raise MatrixMarketError(f"{path}: bad size line {body[0]!r}") from exc
    if nrows != ncols:
        raise MatrixMarketError(f"{path}: matrix is not square ({nrows}x{ncols})")
    entries = body[1:]
    if len(entries) != nnz:
        raise MatrixMarketError(f"{path}: expected {nnz} entries, found {len(entries)}")

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for k, ln in enumerate(entries):
        tok = ln.split()
        if len(tok) != 3:
            raise MatrixMarketError(f"{path}: bad entry line {ln!r}")
        try:
            i, j, v = int(tok[0]), int(tok[1]), float(tok[2])
        except ValueError as exc:
            raise MatrixMarketError(f"{path}: bad entry line {ln!r}") from exc
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"{path}: index ({i}, {j}) outside 1..{nrows}")
        if not np.isfinite(v):
            raise MatrixMarketError(f"{path}: non-finite value on line {ln!r}")
        rows[k], cols[k], vals[k] = i - 1, j - 1, v

    if symmetry == "symmetric":
        if np.any(cols > rows):
            raise MatrixMarketError(f"{path}: symmetric file has upper-triangle entries")
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    return SparseMatrix.from_scipy(coo.tocsr())


def write_matrix_market(path, A: SparseMatrix, symmetric: bool = False) -> None:
    """Write ``A`` in coordinate format with round-trip exact values."""
    coo = A.to_scipy().tocoo()
    rows, cols, vals = coo.row, coo.col, coo.data
    if symmetric:
        if not A.is_symmetric():
            raise ValueError("matrix is not symmetric")
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    kind = "symmetric" if symmetric else "general"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        fh.write(f"{A.n} {A.n} {len(vals)}\n")
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def _laplacian_2d(grid_side: int) -> sp.csr_matrix:
    # row-major node numbering: node (r, c) -> r * grid_side + c
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(grid_side, grid_side))
    eye = sp.identity(grid_side)
    return (sp.kron(eye, t) + sp.kron(t, eye)).tocsr()


def gen_poisson2d(grid_side: int) -> SparseMatrix:
    """5-point Dirichlet Laplacian on a ``grid_side`` x ``grid_side`` grid."""
    if int(grid_side) != grid_side or grid_side < 2:
        raise ValueError(f"grid_side must be an integer >= 2, got {grid_side}")
    return SparseMatrix.from_scipy(_laplacian_2d(int(grid_side)))


def gen_heatflow(grid_side: int, alpha: float) -> SparseMatrix:
    """Implicit-Euler heat operator ``I + alpha * L`` on the same grid."""
    if int(grid_side) != grid_side or grid_side < 2:
        raise ValueError(f"grid_side must be an integer >= 2, got {grid_side}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    lap = _laplacian_2d(int(grid_side))
    return SparseMatrix.from_scipy(sp.identity(lap.shape[0], format="csr") + alpha * lap)


def dense_inverse(A: SparseMatrix, cap: int = ORACLE_CAP) -> np.ndarray:
    """Full ``A^-1`` by dense LU. Intended as a test oracle."""
    if A.n > cap:
        raise ValueError(f"order {A.n} exceeds the dense oracle cap {cap}")
    dense = A.toarray()
    try:
        inv = np.linalg.inv(dense)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("matrix is singular") from exc
    if not np.all(np.isfinite(inv)):
        raise np.linalg.LinAlgError("matrix is singular")
    return inv


def dense_inverse_diagonal(A: SparseMatrix, cap: int = ORACLE_CAP) -> np.ndarray:
    """Exact ``diag(A^-1)`` through :func:`dense_inverse`."""
    return np.ascontiguousarray(np.diagonal(dense_inverse(A, cap)))
