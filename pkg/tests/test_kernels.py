"""The compiled and NumPy kernels must agree; the NumPy ones are checked
against direct formulas."""

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from tracefit import _kernels
from tracefit.matrix_core import SparseMatrix, gen_heatflow, gen_poisson2d

BACKENDS = [_kernels.python_backend]
if _kernels.compiled_backend is not None:
    BACKENDS.append(_kernels.compiled_backend)
IDS = ["python", "compiled"][: len(BACKENDS)]

needs_compiled = pytest.mark.skipif(_kernels.compiled_backend is None, reason="extension not built")


def brute_scan(m, L, R):
    best_t, best = None, None
    for t in range(L + 1, R):
        e = abs((m[L] - m[R]) * (L - R) - (m[L] - m[t]) * (L - t) - (m[t] - m[R]) * (t - R))
        if best is None or e < best:
            best_t, best = t, e
    return best_t, best


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_trapezoid_scan_examples(kb):
    t, e = kb.trapezoid_scan(np.array([0.0, 0.0, 1.0]), 0, 2)
    assert t == 1 and e == abs((0 - 1) * (0 - 2) - 0 - (0 - 1) * (1 - 2))
    # linear data: |.| = 2 (t-L)(R-t) * slope, smallest next to either end
    t, e = kb.trapezoid_scan(np.arange(10.0), 2, 8)
    assert (t, e) == (3, 10.0)
    t, e = kb.trapezoid_scan(np.array([0.0, 0, 0, 10, 10]), 0, 4)
    assert (t, e) == (1, 10.0)
    with pytest.raises(ValueError):
        kb.trapezoid_scan(np.arange(3.0), 0, 1)


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
@given(m=hnp.arrays(np.float64, st.integers(3, 40), elements=st.floats(-1e3, 1e3)),
       data=st.data())
def test_trapezoid_scan_matches_brute_force(kb, m, data):
    m = np.sort(m)
    L = data.draw(st.integers(0, len(m) - 3))
    R = data.draw(st.integers(L + 2, len(m) - 1))
    assert kb.trapezoid_scan(m, L, R) == brute_scan(m, L, R)


@needs_compiled
@given(m=hnp.arrays(np.float64, st.integers(3, 60),
                    elements=st.floats(-10, 10).map(lambda v: round(v, 1))))
def test_trapezoid_scan_backends_identical(m):
    m = np.sort(m)
    py = _kernels.python_backend.trapezoid_scan(m, 0, len(m) - 1)
    c = _kernels.compiled_backend.trapezoid_scan(m, 0, len(m) - 1)
    assert py == c


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_csr_matvec(kb, rng):
    D = rng.standard_normal((30, 30)) * (rng.random((30, 30)) < 0.2)
    A = SparseMatrix.from_dense(D)
    x = rng.standard_normal(30)
    np.testing.assert_allclose(kb.csr_matvec(A.row_ptr, A.col_idx, A.values, x), D @ x, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_ilu0_on_tridiagonal_is_exact_lu(kb):
    n = 8
    T = 4 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    A = SparseMatrix.from_dense(T)
    lu = kb.ilu0(n, A.row_ptr, A.col_idx, A.values)
    F = SparseMatrix(n, A.row_ptr, A.col_idx, lu).toarray()
    L = np.tril(F, -1) + np.eye(n)
    U = np.triu(F)
    np.testing.assert_allclose(L @ U, T, atol=1e-14)


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_ilu0_zero_pivot(kb):
    A = SparseMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ZeroDivisionError):
        kb.ilu0(2, A.row_ptr, A.col_idx, A.values)


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_triangular_solves(kb, rng):
    n = 12
    Ld = np.tril(rng.standard_normal((n, n)), -1) * 0.3 + np.eye(n)
    Ud = np.triu(rng.standard_normal((n, n)), 1) * 0.3 + np.diag(rng.uniform(1, 2, n))
    L, U = SparseMatrix.from_dense(Ld), SparseMatrix.from_dense(Ud)
    b = rng.standard_normal(n)
    np.testing.assert_allclose(kb.lower_solve(L.row_ptr, L.col_idx, L.values, b),
                               sla.solve_triangular(Ld, b, lower=True), rtol=1e-12)
    np.testing.assert_allclose(kb.upper_solve(U.row_ptr, U.col_idx, U.values, b),
                               sla.solve_triangular(Ud, b), rtol=1e-12)
    B = rng.standard_normal((n, 3))
    np.testing.assert_allclose(kb.upper_solve(U.row_ptr, U.col_idx, U.values, B),
                               sla.solve_triangular(Ud, B), rtol=1e-12)


@pytest.mark.parametrize("kb", BACKENDS, ids=IDS)
def test_ilu_inverse_diagonal_with_permutation(kb, rng):
    n = 15
    Ld = np.tril(rng.standard_normal((n, n)), -1) * 0.2 + np.eye(n)
    Ud = np.triu(rng.standard_normal((n, n)), 1) * 0.2 + np.diag(rng.uniform(1, 2, n))
    perm = rng.permutation(n)
    iperm = np.argsort(perm)
    # Z^-1 = Q (LU)^-1 with Q[perm[k], k] = 1
    Q = np.zeros((n, n))
    Q[perm, np.arange(n)] = 1
    ref = np.diag(Q @ np.linalg.inv(Ld @ Ud))
    L, U = SparseMatrix.from_dense(Ld), SparseMatrix.from_dense(Ud)
    got = kb.ilu_inverse_diagonal(L.row_ptr, L.col_idx, L.values, U.row_ptr, U.col_idx, U.values, iperm)
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("A", [gen_poisson2d(12), gen_heatflow(9, 0.3)], ids=["poisson", "heatflow"])
def test_backends_agree_on_ilu(A):
    py, c = _kernels.python_backend, _kernels.compiled_backend
    lu_p = py.ilu0(A.n, A.row_ptr, A.col_idx, A.values)
    lu_c = c.ilu0(A.n, A.row_ptr, A.col_idx, A.values)
    np.testing.assert_allclose(lu_c, lu_p, rtol=1e-14)
    x = np.linspace(-1, 1, A.n)
    np.testing.assert_allclose(c.csr_matvec(A.row_ptr, A.col_idx, A.values, x),
                               py.csr_matvec(A.row_ptr, A.col_idx, A.values, x), rtol=1e-14, atol=1e-15)


def test_backend_selection_flag():
    assert _kernels.BACKEND in ("cython", "python")
    assert (_kernels.BACKEND == "cython") == (_kernels.compiled_backend is not None)


def test_environment_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, TRACEFIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import tracefit; print(tracefit.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
