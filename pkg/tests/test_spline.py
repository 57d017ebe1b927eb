import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline, make_smoothing_spline

from causalkinetix.spline import (
    ConstrainedSmootherMap,
    DerivativeConstraints,
    SplineError,
    cv_curve,
    default_lambda_grid,
    eval_deriv,
    eval_spline,
    fit_constrained_smoother,
    fit_smoother,
    select_lambda_cv,
)


def _grid(L=11, T=10.0):
    return T * (np.arange(L) / (L - 1)) ** 2


def _kkt_oracle(t, y, lam, g):
    """Direct KKT solve on scipy's B-spline basis with a quadrature penalty."""
    k = 3
    knots = np.r_[[t[0]] * k, t, [t[-1]] * k]
    nb = len(knots) - k - 1
    B = BSpline.design_matrix(t, knots, k).toarray()
    eye = np.eye(nb)
    d1 = np.array([BSpline(knots, eye[i], k).derivative()(t) for i in range(nb)]).T
    xq, wq = np.polynomial.legendre.leggauss(4)
    omega = np.zeros((nb, nb))
    for a, b in zip(t[:-1], t[1:]):
        x = (a + b) / 2 + (b - a) / 2 * xq
        w = (b - a) / 2 * wq
        d2 = np.array([BSpline(knots, eye[i], k).derivative(2)(x) for i in range(nb)])
        omega += (d2 * w) @ d2.T
    K = np.block([[2 * (B.T @ B + lam * omega), d1.T], [d1, np.zeros((len(t), len(t)))]])
    rhs = np.r_[2 * B.T @ y, g]
    sol = np.linalg.solve(K, rhs)
    return BSpline(knots, sol[:nb], k)


def test_line_reproduced_any_lambda():
    t = _grid()
    y = 2 * t
    for lam in (1e-6, 1.0, 1e6):
        fit = fit_smoother(t, y, lam)
        np.testing.assert_allclose(fit(t), y, atol=1e-9)


def test_huge_lambda_gives_ols_line():
    rng = np.random.default_rng(1)
    t = _grid()
    y = 1 + 0.5 * t + rng.normal(size=t.size)
    fit = fit_smoother(t, y, 1e12)
    line = np.polyval(np.polyfit(t, y, 1), t)
    np.testing.assert_allclose(fit(t), line, atol=1e-5)
    slopes = eval_deriv(fit, np.linspace(0, 10, 7))
    assert np.ptp(slopes) < 1e-5


def test_matches_scipy_smoothing_spline():
    rng = np.random.default_rng(2)
    t = np.sort(rng.uniform(0, 10, 17))
    y = np.sin(t) + 0.1 * rng.normal(size=t.size)
    tt = np.linspace(t[0], t[-1], 301)
    for lam in (1e-3, 0.1, 10.0):
        ours = fit_smoother(t, y, lam)
        ref = make_smoothing_spline(t, y, lam=lam)
        np.testing.assert_allclose(ours(tt), ref(tt), atol=1e-9)
        np.testing.assert_allclose(eval_deriv(ours, tt), ref.derivative()(tt), atol=1e-8)


def test_cv_fit_between_interpolation_and_line():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 6, 25)
    y = np.sin(t) + 0.2 * rng.normal(size=t.size)
    lam = select_lambda_cv(t, y)
    rss = np.mean((fit_smoother(t, y, lam)(t) - y) ** 2)
    rss_interp = np.mean((fit_smoother(t, y, 0.0)(t) - y) ** 2)
    rss_line = np.mean((np.polyval(np.polyfit(t, y, 1), t) - y) ** 2)
    assert rss_interp < 1e-12 < rss < rss_line


def test_cv_line_prefers_large_lambda():
    rng = np.random.default_rng(4)
    t = np.linspace(0, 1, 20)
    y = 3 * t + 0.05 * rng.normal(size=t.size)
    grid = np.logspace(-4, 4, 9)
    lam = select_lambda_cv(t, y, grid)
    assert lam >= np.median(grid)
    errs = cv_curve(t, y, grid)
    best = np.flatnonzero(errs <= errs.min() * (1 + 1e-12))
    assert lam == grid[best].max()


def test_cv_single_candidate_and_loo():
    t = np.linspace(0, 2, 12)
    y = np.cos(t)
    assert select_lambda_cv(t, y, [0.3]) == 0.3
    lam = select_lambda_cv(t, y, folds=len(t))
    assert np.isfinite(lam) and lam > 0


def test_cv_fold_too_small():
    t = np.linspace(0, 1, 6)
    with pytest.raises(SplineError):
        cv_curve(t, t, [1.0], folds=7)
    with pytest.raises(SplineError):
        cv_curve(t, t, [1.0], folds=2)  # each fold keeps only 3 points


def test_default_grid_scaling():
    t = np.linspace(0, 100, 11)
    g = default_lambda_grid(t)
    assert g.size == 25
    np.testing.assert_allclose([g[0], g[-1]], np.array([1e-6, 1e3]) * 100**3 / 11)


def test_cubic_reproduced_with_zero_lambda():
    t = np.linspace(-1, 2, 9)
    p = np.array([0.5, -1.0, 2.0, 0.3])
    fit = fit_smoother(t, np.polyval(p, t), 0.0)
    tt = np.linspace(-1, 2, 50)
    np.testing.assert_allclose(eval_spline(fit, tt), np.polyval(p, tt), atol=1e-8)
    np.testing.assert_allclose(eval_deriv(fit, tt), np.polyval(np.polyder(p), tt), atol=1e-7)


def test_no_extrapolation():
    fit = fit_smoother(np.linspace(0, 1, 6), np.arange(6.0), 1.0)
    with pytest.raises(SplineError):
        fit(1.5)
    with pytest.raises(SplineError):
        eval_deriv(fit, 0.5, order=3)


def test_duplicate_times_rejected():
    with pytest.raises(SplineError):
        fit_smoother([0, 1, 1, 2], [0, 1, 1, 2], 1.0)


def test_derivative_vs_finite_difference():
    rng = np.random.default_rng(5)
    t = _grid(15, 100.0)
    y = np.exp(-t / 40) + 0.01 * rng.normal(size=t.size)
    fit = fit_smoother(t, y, select_lambda_cv(t, y))
    pts = rng.uniform(1, 99, 100)
    h = 1e-5
    fd = (fit(pts + h) - fit(pts - h)) / (2 * h)
    d = eval_deriv(fit, pts)
    assert np.all(np.abs(fd - d) <= 1e-4 * np.maximum(np.abs(d), 1e-3))


def test_constrained_own_derivatives_unchanged():
    rng = np.random.default_rng(6)
    t = _grid()
    y = np.sin(t / 3) + 0.05 * rng.normal(size=t.size)
    free = fit_smoother(t, y, 0.5)
    con = fit_constrained_smoother(t, y, 0.5, DerivativeConstraints(t, eval_deriv(free, t)))
    assert abs(con.objective - free.objective) < 1e-9
    np.testing.assert_allclose(con(t), free(t), atol=1e-8)


def test_constrained_line_true_slope():
    t = _grid()
    con = fit_constrained_smoother(t, 2 * t, 1.0, DerivativeConstraints(t, np.full(t.size, 2.0)))
    np.testing.assert_allclose(con(t), 2 * t, atol=1e-8)


def test_constrained_line_wrong_slope():
    t = _grid()
    con = fit_constrained_smoother(t, 2 * t, 1.0, DerivativeConstraints(t, np.full(t.size, 1.5)))
    np.testing.assert_allclose(eval_deriv(con, t), 1.5, atol=1e-9)
    assert np.mean((con(t) - 2 * t) ** 2) > 0


def test_constrained_matches_kkt_oracle():
    rng = np.random.default_rng(7)
    t = np.sort(rng.uniform(0, 5, 9))
    y = rng.normal(size=t.size)
    g = rng.normal(size=t.size)
    ours = fit_constrained_smoother(t, y, 0.3, DerivativeConstraints(t, g))
    ref = _kkt_oracle(t, y, 0.3, g)
    tt = np.linspace(t[0], t[-1], 101)
    np.testing.assert_allclose(ours(tt), ref(tt), atol=1e-7)


def test_constraints_off_grid_rejected():
    t = np.linspace(0, 1, 6)
    with pytest.raises(SplineError):
        fit_constrained_smoother(t, t, 1.0, DerivativeConstraints([0.33], [1.0]))


def test_smoother_map_agrees_with_direct_fit():
    rng = np.random.default_rng(8)
    t = _grid(11, 100.0)
    y = rng.normal(size=t.size).cumsum()
    mp = ConstrainedSmootherMap(t, y, 50.0)
    G = rng.normal(size=(3, t.size))
    for g, fv, ob in zip(G, mp.fitted(G), mp.objective(G)):
        direct = fit_constrained_smoother(t, y, 50.0, DerivativeConstraints(t, g))
        np.testing.assert_allclose(fv, direct(t), atol=1e-8)
        assert ob == pytest.approx(direct.objective, rel=1e-9, abs=1e-9)


def test_penalty_order_three_quintic():
    t = np.linspace(0, 1, 10)
    y = t**2
    fit = fit_smoother(t, y, 1e3, degree=5, penalty_order=3)
    # quadratics are in the null space of a third-derivative penalty
    np.testing.assert_allclose(fit(t), y, atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.integers(4, 14), st.floats(-4, 3), st.integers(0, 2**31 - 1))
def test_constrained_objective_not_below_free(L, loglam, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 10, L))
    if np.min(np.diff(t)) < 1e-3:
        t = np.linspace(0, 10, L)
    y = rng.normal(size=L)
    lam = 10.0**loglam
    free = fit_smoother(t, y, lam)
    con = fit_constrained_smoother(t, y, lam, DerivativeConstraints(t, rng.normal(size=L)))
    assert con.objective >= free.objective - 1e-8
    np.testing.assert_allclose(eval_deriv(con, t), con(t, 1), atol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 12), st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5))
def test_linear_data_fixed_point(L, loglam, a, b):
    t = np.linspace(0, 3, L)
    y = a + b * t
    fit = fit_smoother(t, y, 10.0**loglam)
    np.testing.assert_allclose(fit(t), y, atol=1e-8 * (1 + abs(a) + abs(b)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_objective_monotone_in_lambda(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 10)
    y = rng.normal(size=10)
    objs = [fit_smoother(t, y, lam).objective for lam in np.logspace(-4, 2, 8)]
    assert all(a <= b + 1e-10 for a, b in zip(objs, objs[1:]))


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 12), st.integers(0, 2**31 - 1))
def test_constraints_satisfied(L, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 5, L)
    g = rng.normal(size=L)
    con = fit_constrained_smoother(t, rng.normal(size=L), 0.1, DerivativeConstraints(t, g))
    np.testing.assert_allclose(eval_deriv(con, t), g, atol=1e-8)
