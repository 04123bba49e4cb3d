import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.interpolate import PchipInterpolator

from tracefit.approx_diag import DiagApprox
from tracefit.fitting import (
    FitError,
    LinearModel,
    PchipModel,
    eval_model,
    fit_linear,
    fit_pchip,
    fitted_residual,
    pchip_knots,
    pchip_slopes,
    trace_from_fit,
)
from tracefit.sampling import FitSampleSet


def knots_strategy(min_size=2, max_size=15):
    return st.integers(min_size, max_size).flatmap(lambda n: st.tuples(
        hnp.arrays(np.float64, n, elements=st.floats(0.01, 10), unique=True),
        hnp.arrays(np.float64, n, elements=st.floats(-100, 100)),
    )).map(lambda xy: (np.cumsum(xy[0]), xy[1]))


def model(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return PchipModel(x, y, pchip_slopes(x, y))


def all_points(M):
    a = DiagApprox(np.asarray(M, float), "svd")
    pos = np.arange(a.n)
    return a, FitSampleSet(pos, a.J[pos])


def test_linear_exact_cases():
    M = np.array([0.5, 1.0, 2.0, 4.0, 7.0])
    f = fit_linear(M, M)
    assert f.b == pytest.approx(1, abs=1e-14) and f.c == pytest.approx(0, abs=1e-14)
    f = fit_linear(M, 3 * M + 2)
    assert abs(f.b - 3) <= 1e-12 and abs(f.c - 2) <= 1e-12
    f = fit_linear([0.0, 1.0, 2.0], [0.0, 0.0, 3.0])
    assert f.b == pytest.approx(1.5, abs=1e-14) and f.c == pytest.approx(-0.5, abs=1e-14)


def test_linear_rank_deficient():
    with pytest.raises(FitError):
        fit_linear([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(FitError):
        fit_linear([1.0], [1.0])


@given(st.integers(3, 30).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, n, elements=st.floats(-10, 10)),
    hnp.arrays(np.float64, n, elements=st.floats(-10, 10)))))
def test_linear_least_squares_optimal(data):
    M, D = data
    if np.ptp(M) < 1e-3:
        return
    f = fit_linear(M, D)
    base = np.linalg.norm(D - f(M))
    for db, dc in ((1e-3, 0), (-1e-3, 0), (0, 1e-3), (0, -1e-3)):
        assert np.linalg.norm(D - LinearModel(f.b + db, f.c + dc)(M)) >= base - 1e-12


def test_linear_eval():
    assert eval_model(LinearModel(2.0, 1.0), 3.0) == 7.0


def test_two_knot_pchip_is_linear():
    p = model([0.0, 1.0], [0.0, 1.0])
    assert eval_model(p, 0.5) == 0.5
    np.testing.assert_allclose(p(np.linspace(0, 1, 11)), np.linspace(0, 1, 11), atol=1e-15)


@given(knots_strategy())
def test_pchip_hits_knots(xy):
    x, y = xy
    p = model(x, y)
    assert np.all(np.abs(p(x) - y) <= 1e-13 * np.maximum(1, np.abs(y)))


@given(knots_strategy(3))
def test_pchip_matches_scipy(xy):
    x, y = xy
    grid = np.linspace(x[0], x[-1], 200)
    np.testing.assert_allclose(model(x, y)(grid), PchipInterpolator(x, y)(grid), rtol=1e-9, atol=1e-9)


@given(knots_strategy(3))
def test_pchip_no_overshoot(xy):
    x, y = xy
    p = model(x, y)
    for k in range(len(x) - 1):
        g = p(np.linspace(x[k], x[k + 1], 1000))
        lo, hi = min(y[k], y[k + 1]), max(y[k], y[k + 1])
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        assert g.min() >= lo - tol and g.max() <= hi + tol


def test_pchip_monotone_increasing():
    x = np.array([0.0, 0.3, 1.0, 1.1, 4.0])
    y = np.array([-2.0, 0.0, 0.1, 3.0, 3.5])
    g = model(x, y)(np.linspace(-1, 5, 5000))
    assert np.all(np.diff(g) >= -1e-14)


def test_pchip_constant_extrapolation():
    p = model([1.0, 2.0, 4.0], [1.0, 3.0, 4.0])
    assert p(0.0) == 1.0 and p(10.0) == 4.0


def test_pchip_knot_dedup_keeps_first():
    a = DiagApprox(np.array([0.0, 0.0, 1.0]), "svd")
    s = FitSampleSet(np.arange(3), a.J[np.arange(3)])
    x, y = pchip_knots(a, s, [5.0, 6.0, 7.0])
    np.testing.assert_array_equal(x, [0.0, 1.0])
    np.testing.assert_array_equal(y, [5.0, 7.0])


def test_pchip_single_knot():
    a = DiagApprox(np.ones(4), "svd")
    s = FitSampleSet(np.array([0, 3]), a.J[[0, 3]])
    with pytest.raises(FitError):
        fit_pchip(a, s, [2.0, 2.0])
    f = fit_pchip(a, s, [2.0, 2.0], allow_constant=True)
    assert trace_from_fit(f, a.M) == 8.0


def test_pchip_model_validation():
    with pytest.raises(FitError):
        PchipModel(np.array([1.0, 1.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(FitError):
        LinearModel(np.nan, 0.0)


def test_trace_identity_model():
    M = np.array([1.0, 2.5, 4.0])
    assert trace_from_fit(LinearModel(1.0, 0.0), M) == M.sum()


@given(st.integers(2, 60), st.integers(0, 2**31 - 1))
def test_full_interpolation_recovers_trace(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0, 1, n)
    D = 2 * M + rng.uniform(-0.1, 0.1, n)
    a, s = all_points(M)
    f = fit_pchip(a, s, D[s.s_fit_original])
    assert trace_from_fit(f, M) == pytest.approx(D.sum(), rel=1e-12)


def test_residual_examples():
    M = np.array([1.0, 2.0, 3.0, 4.0])
    D = 2 * M + 1
    f = LinearModel(2.0, 1.0)
    np.testing.assert_array_equal(fitted_residual(f, M, D[[0, 3]], [0, 3], fit_idx=[1, 2]), 0.0)
    # hand fit y = x on M = (1, 2), probes with D = (0.5, 1.7)
    got = fitted_residual(LinearModel(1.0, 0.0), np.array([1.0, 2.0]), [0.5, 1.7], [0, 1])
    np.testing.assert_allclose(got, [-0.5, -0.3], atol=1e-15)
    with pytest.raises(ValueError):
        fitted_residual(f, M, D[[0]], [0], fit_idx=[0, 1])


@pytest.mark.parametrize("kind", ["shift", "scale"])
def test_linear_fit_removes_shift_and_scale(kind):
    rng = np.random.default_rng(4)
    M = rng.uniform(1, 5, 50)
    D = M + 3.0 if kind == "shift" else 2.5 * M
    f = fit_linear(M[:5], D[:5])
    r = fitted_residual(f, M, D[5:], np.arange(5, 50), fit_idx=np.arange(5))
    assert np.var(50 * r) <= 1e-20
