"""NumPy implementations of the inner-loop kernels.

Used when the compiled extension is unavailable or when
``TRACEFIT_PURE_PYTHON=1`` is set. Every function here has a drop-in twin in
``_ckernels.pyx`` with the same signature and floating-point evaluation order.
"""

import numpy as np

_BLOCK = 256


def csr_matvec(indptr, indices, data, x):
    x = np.asarray(x, dtype=np.float64)
    n = len(indptr) - 1
    prod = data * x[indices]
    y = np.zeros(n, dtype=np.float64)
    # reduceat mishandles empty rows, so accumulate row ids instead
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(y, rows, prod)
    return y


def trapezoid_scan(m, left, right):
    """Return ``(t, err)`` minimizing the three-point trapezoid residual on
    the open position range ``(left, right)``; ties go to the smallest t."""
    if right - left < 2:
        raise ValueError(f"interval ({left}, {right}) has no interior point")
    m = np.asarray(m, dtype=np.float64)
    ml = m[left]
    mr = m[right]
    t = np.arange(left + 1, right)
    mt = m[left + 1:right]
    base = (ml - mr) * float(left - right)
    vals = np.abs(base - (ml - mt) * (left - t).astype(np.float64)
                  - (mt - mr) * (t - right).astype(np.float64))
    k = int(np.argmin(vals))
    return left + 1 + k, float(vals[k])


def ilu0(n, indptr, indices, data):
    """Zero-fill incomplete LU on a CSR pattern with sorted columns.

    Returns the factored values in the input pattern: strictly lower entries
    hold L (unit diagonal implied), the rest hold U.
    """
    lu = np.array(data, dtype=np.float64, copy=True)
    diag = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        hit = np.nonzero(indices[lo:hi] == i)[0]
        if len(hit) == 0:
            raise ZeroDivisionError(f"ILU(0): row {i} has no diagonal entry")
        diag[i] = lo + hit[0]
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        pos = {int(indices[p]): p for p in range(lo, hi)}
        for p in range(lo, diag[i]):
            k = int(indices[p])
            piv = lu[diag[k]]
            if piv == 0.0:
                raise ZeroDivisionError(f"ILU(0): zero pivot at row {k}")
            lu[p] /= piv
            lik = lu[p]
            for q in range(diag[k] + 1, indptr[k + 1]):
                target = pos.get(int(indices[q]))
                if target is not None:
                    lu[target] -= lik * lu[q]
        if lu[diag[i]] == 0.0:
            raise ZeroDivisionError(f"ILU(0): zero pivot at row {i}")
    return lu


def lower_solve(indptr, indices, data, b):
    """Forward substitution; the diagonal must be the last entry of each row."""
    x = np.array(b, dtype=np.float64, copy=True)
    n = len(indptr) - 1
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1] - 1
        if hi > lo:
            x[i] -= data[lo:hi] @ x[indices[lo:hi]]
        x[i] /= data[hi]
    return x


def upper_solve(indptr, indices, data, b):
    """Back substitution; the diagonal must be the first entry of each row."""
    x = np.array(b, dtype=np.float64, copy=True)
    n = len(indptr) - 1
    for i in range(n - 1, -1, -1):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo + 1:
            x[i] -= data[lo + 1:hi] @ x[indices[lo + 1:hi]]
        x[i] /= data[lo]
    return x


def ilu_inverse_diagonal(lp, li, lx, up, ui, ux, iperm):
    """diag(Q U^-1 L^-1) via blocked triangular solves on identity columns."""
    n = len(lp) - 1
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK):
        cols = np.arange(start, min(start + _BLOCK, n))
        rhs = np.zeros((n, len(cols)), dtype=np.float64)
        rhs[cols, np.arange(len(cols))] = 1.0
        y = upper_solve(up, ui, ux, lower_solve(lp, li, lx, rhs))
        out[cols] = y[iperm[cols], np.arange(len(cols))]
    return out
