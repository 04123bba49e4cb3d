# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner-loop kernels. Mirrors ``_pykernels`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.string cimport memset

cnp.import_array()

ctypedef cnp.int64_t idx_t


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def csr_matvec(indptr, indices, data, x):
    cdef const idx_t[::1] ip = _i64(indptr)
    cdef const idx_t[::1] ix = _i64(indices)
    cdef const double[::1] v = _f64(data)
    cdef const double[::1] xv = _f64(x)
    cdef Py_ssize_t n = ip.shape[0] - 1
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, p
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for p in range(ip[i], ip[i + 1]):
                acc = acc + v[p] * xv[ix[p]]
            y[i] = acc
    return out


def trapezoid_scan(m, Py_ssize_t left, Py_ssize_t right):
    if right - left < 2:
        raise ValueError(f"interval ({left}, {right}) has no interior point")
    cdef const double[::1] mv = _f64(m)
    cdef double ml = mv[left]
    cdef double mr = mv[right]
    cdef double base = (ml - mr) * <double>(left - right)
    cdef double mt, val
    cdef double best = -1.0
    cdef Py_ssize_t t, best_t = left + 1
    for t in range(left + 1, right):
        mt = mv[t]
        val = fabs(base - (ml - mt) * <double>(left - t) - (mt - mr) * <double>(t - right))
        if best < 0.0 or val < best:
            best = val
            best_t = t
    return best_t, best


def ilu0(Py_ssize_t n, indptr, indices, data):
    cdef const idx_t[::1] ip = _i64(indptr)
    cdef const idx_t[::1] ix = _i64(indices)
    lu_arr = np.array(data, dtype=np.float64, copy=True)
    cdef double[::1] lu = lu_arr
    diag_arr = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] diag = diag_arr
    marker_arr = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] marker = marker_arr
    cdef Py_ssize_t i, p, q, k, target
    cdef double piv, lik
    for i in range(n):
        for p in range(ip[i], ip[i + 1]):
            if ix[p] == i:
                diag[i] = p
                break
        if diag[i] < 0:
            raise ZeroDivisionError(f"ILU(0): row {i} has no diagonal entry")
    for i in range(n):
        for p in range(ip[i], ip[i + 1]):
            marker[ix[p]] = p
        for p in range(ip[i], diag[i]):
            k = ix[p]
            piv = lu[diag[k]]
            if piv == 0.0:
                raise ZeroDivisionError(f"ILU(0): zero pivot at row {k}")
            lu[p] = lu[p] / piv
            lik = lu[p]
            for q in range(diag[k] + 1, ip[k + 1]):
                target = marker[ix[q]]
                if target >= 0:
                    lu[target] -= lik * lu[q]
        for p in range(ip[i], ip[i + 1]):
            marker[ix[p]] = -1
        if lu[diag[i]] == 0.0:
            raise ZeroDivisionError(f"ILU(0): zero pivot at row {i}")
    return lu_arr


cdef void _lower(const idx_t[::1] ip, const idx_t[::1] ix, const double[::1] v,
                 double[::1] x, Py_ssize_t start) noexcept nogil:
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef Py_ssize_t i, p, hi
    cdef double acc
    for i in range(start, n):
        hi = ip[i + 1] - 1
        acc = x[i]
        for p in range(ip[i], hi):
            acc = acc - v[p] * x[ix[p]]
        x[i] = acc / v[hi]


cdef void _upper(const idx_t[::1] ip, const idx_t[::1] ix, const double[::1] v,
                 double[::1] x, Py_ssize_t stop) noexcept nogil:
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef Py_ssize_t i, p, lo
    cdef double acc
    i = n - 1
    while i >= stop:
        lo = ip[i]
        acc = x[i]
        for p in range(lo + 1, ip[i + 1]):
            acc = acc - v[p] * x[ix[p]]
        x[i] = acc / v[lo]
        i -= 1


def lower_solve(indptr, indices, data, b):
    cdef const idx_t[::1] ip = _i64(indptr)
    cdef const idx_t[::1] ix = _i64(indices)
    cdef const double[::1] v = _f64(data)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        return np.column_stack([lower_solve(indptr, indices, data, b[:, j])
                                for j in range(b.shape[1])])
    out = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] x = out
    with nogil:
        _lower(ip, ix, v, x, 0)
    return out


def upper_solve(indptr, indices, data, b):
    cdef const idx_t[::1] ip = _i64(indptr)
    cdef const idx_t[::1] ix = _i64(indices)
    cdef const double[::1] v = _f64(data)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        return np.column_stack([upper_solve(indptr, indices, data, b[:, j])
                                for j in range(b.shape[1])])
    out = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] x = out
    with nogil:
        _upper(ip, ix, v, x, 0)
    return out


def ilu_inverse_diagonal(lp, li, lx, up, ui, ux, iperm):
    cdef const idx_t[::1] lip = _i64(lp)
    cdef const idx_t[::1] lix = _i64(li)
    cdef const double[::1] lv = _f64(lx)
    cdef const idx_t[::1] uip = _i64(up)
    cdef const idx_t[::1] uix = _i64(ui)
    cdef const double[::1] uv = _f64(ux)
    cdef const idx_t[::1] ipm = _i64(iperm)
    cdef Py_ssize_t n = lip.shape[0] - 1
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    work_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] x = work_arr
    cdef Py_ssize_t i, pos
    with nogil:
        for i in range(n):
            memset(&x[0], 0, n * sizeof(double))
            x[i] = 1.0
            # L^-1 e_i vanishes above row i
            _lower(lip, lix, lv, x, i)
            pos = ipm[i]
            _upper(uip, uix, uv, x, pos)
            out[i] = x[pos]
    return out_arr
