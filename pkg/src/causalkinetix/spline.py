"""Penalized smoothing splines with optional derivative equality constraints.

The basis is a clamped B-spline basis of odd degree (cubic by default) with
knots at the observation times, so the fitted function lives in a space of
dimension ``L + degree - 1``.  All computations run on the unit interval
``u = (t - t_0) / T`` with ``T = t_L - t_0``; penalty weights and derivative
values are converted at the boundary, which keeps the linear systems well
scaled regardless of the time units of the data.

A roughness penalty ``lam * integral(y^(q)(t)^2 dt)`` in time units becomes
``lam / T**(2q - 1)`` on the unit interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "SplineError",
    "SplineFit",
    "DerivativeConstraints",
    "bspline_design",
    "fit_smoother",
    "fit_constrained_smoother",
    "select_lambda_cv",
    "default_lambda_grid",
    "eval_spline",
    "eval_deriv",
    "ConstrainedSmootherMap",
]


class SplineError(ValueError):
    """Invalid input or numerically singular smoothing problem."""


# ------------------------------------------------------------------ basis


def clamped_knots(breaks, degree=3):
    breaks = np.asarray(breaks, dtype=float)
    return np.r_[[breaks[0]] * degree, breaks, [breaks[-1]] * degree]


def bspline_design(knots, x, degree=3, deriv=0):
    """Values (or derivatives) of every B-spline basis function at ``x``.

    Parameters
    ----------
    knots : ndarray
        Full (clamped) knot vector of length ``n_basis + degree + 1``.
    x : array_like
        Evaluation points inside ``[knots[0], knots[-1]]``.
    degree : int
    deriv : int
        Derivative order, ``0 <= deriv <= degree``.

    Returns
    -------
    ndarray of shape (len(x), n_basis)
    """
    t = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nb = len(t) - degree - 1
    # degree-0 indicator of the (half-open) span, closed at the right end
    last = np.max(np.nonzero(t[:-1] < t[1:])[0])
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, 0, last)
    span[x >= t[last + 1]] = last
    n0 = len(t) - 1
    B = np.zeros((len(x), n0))
    B[np.arange(len(x)), span] = 1.0
    for k in range(1, degree + 1):
        n_k = n0 - k
        left_den = t[k : k + n_k] - t[:n_k]
        right_den = t[k + 1 : k + 1 + n_k] - t[1 : 1 + n_k]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_l = np.where(left_den > 0, 1.0 / left_den, 0.0)
            inv_r = np.where(right_den > 0, 1.0 / right_den, 0.0)
        if k > degree - deriv:
            # derivative recursion: B'_{i,k} = k (B_{i,k-1}/dl - B_{i+1,k-1}/dr)
            B = k * (B[:, :n_k] * inv_l - B[:, 1 : n_k + 1] * inv_r)
        else:
            a = (x[:, None] - t[:n_k]) * inv_l
            b = (t[k + 1 : k + 1 + n_k] - x[:, None]) * inv_r
            B = a * B[:, :n_k] + b * B[:, 1 : n_k + 1]
    return B[:, :nb]


def _gauss_points(n):
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class _Basis:
    breaks: np.ndarray  # unit-interval breakpoints
    t0: float
    scale: float
    degree: int
    penalty_order: int
    knots: np.ndarray
    B: np.ndarray  # values at breakpoints
    D1: np.ndarray  # first derivative at breakpoints (unit time)
    omega: np.ndarray  # penalty Gram matrix (unit time)
    root: np.ndarray  # quadrature rows with root.T @ root == omega

    @property
    def n_basis(self):
        return self.B.shape[1]


@lru_cache(maxsize=256)
def _basis_cached(times_key, degree, penalty_order):
    times = np.array(times_key)
    t0, scale = times[0], times[-1] - times[0]
    u = (times - t0) / scale
    knots = clamped_knots(u, degree)
    B = bspline_design(knots, u, degree)
    D1 = bspline_design(knots, u, degree, deriv=1)
    # exact quadrature: integrand is a polynomial of degree 2 (degree - q) per span
    nq = degree - penalty_order + 1
    gx, gw = _gauss_points(nq)
    a, b = u[:-1], u[1:]
    half = (b - a) / 2
    xq = (a[:, None] + half[:, None] * (gx[None, :] + 1)).ravel()
    wq = (half[:, None] * gw[None, :]).ravel()
    Dq = bspline_design(knots, xq, degree, deriv=penalty_order)
    root = np.sqrt(wq)[:, None] * Dq
    omega = root.T @ root
    for arr in (u, knots, B, D1, omega, root):
        arr.setflags(write=False)
    return _Basis(u, float(t0), float(scale), degree, penalty_order, knots, B, D1, omega, root)


def _basis(times, degree=3, penalty_order=2):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 3:
        raise SplineError("time grid needs at least 3 points")
    if not np.all(np.isfinite(times)):
        raise SplineError("non-finite time value")
    if np.any(np.diff(times) <= 0):
        raise SplineError("time grid must be strictly increasing (duplicate or unordered times)")
    if degree not in (3, 5) or penalty_order not in (2, 3) or penalty_order >= degree:
        raise SplineError("supported (degree, penalty_order): (3, 2), (5, 2), (5, 3)")
    return _basis_cached(tuple(times.tolist()), degree, penalty_order)


def _unit_lambda(lam, basis):
    return lam / basis.scale ** (2 * basis.penalty_order - 1)


# ------------------------------------------------------------------ fits


@dataclass(frozen=True)
class SplineFit:
    """A fitted penalized spline.

    ``knots`` are the breakpoints in time units; ``coefficients`` are over the
    clamped B-spline basis of the given ``degree`` (``len(knots) + degree - 1``
    entries).  ``bound_C`` is informational only (see :meth:`within_bound`).
    """

    knots: np.ndarray
    coefficients: np.ndarray
    lam: float
    objective: float
    degree: int = 3
    penalty_order: int = 2
    bound_C: float | None = None

    @property
    def _unit(self):
        return _basis(self.knots, self.degree, self.penalty_order)

    def _to_unit(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.knots[0], self.knots[-1]
        slack = 1e-12 * (hi - lo)
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise SplineError(f"evaluation point outside [{lo}, {hi}]; no extrapolation")
        b = self._unit
        return np.clip((t - b.t0) / b.scale, 0.0, 1.0)

    def __call__(self, t, deriv=0):
        scalar = np.ndim(t) == 0
        u = self._to_unit(t)
        b = self._unit
        vals = bspline_design(b.knots, u, self.degree, deriv) @ self.coefficients
        vals = vals / b.scale**deriv
        return float(vals[0]) if scalar else vals

    def fitted_values(self):
        return self._unit.B @ self.coefficients

    def within_bound(self, C=None, n_points=512):
        """Whether sup norms of the value and first two derivatives are <= C."""
        C = self.bound_C if C is None else C
        if C is None:
            return True
        t = np.linspace(self.knots[0], self.knots[-1], n_points)
        return all(np.max(np.abs(self(t, k))) <= C for k in range(3))


@dataclass(frozen=True)
class DerivativeConstraints:
    at_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        at = np.atleast_1d(np.asarray(self.at_times, dtype=float))
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if at.shape != vals.shape:
            raise SplineError("constraint times and values differ in length")
        if not np.all(np.isfinite(vals)):
            raise SplineError("non-finite derivative constraint")
        object.__setattr__(self, "at_times", at)
        object.__setattr__(self, "values", vals)


def eval_spline(fit: SplineFit, t):
    return fit(t)


def eval_deriv(fit: SplineFit, t, order=1):
    if order not in (1, 2):
        raise SplineError("derivative order must be 1 or 2")
    return fit(t, order)


def _check_obs(basis, obs):
    obs = np.asarray(obs, dtype=float)
    if obs.shape != basis.breaks.shape:
        raise SplineError(f"obs has length {obs.size}, grid has {basis.breaks.size}")
    if not np.all(np.isfinite(obs)):
        raise SplineError("non-finite observation")
    return obs


def _penalized_lstsq(basis, obs, lam_u, weights=None):
    B = basis.B
    if weights is not None:
        sw = np.sqrt(weights)
        B, obs = B * sw[:, None], obs * sw
    R = basis.root * np.sqrt(lam_u)
    A = np.vstack([B, R])
    rhs = np.r_[obs, np.zeros(len(R))]
    coef, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < A.shape[1]:
        raise SplineError("singular smoothing system")
    return coef


def _not_a_knot_rows(basis):
    if basis.degree != 3 or len(basis.breaks) < 4:
        raise SplineError("lam = 0 needs a cubic basis and at least 4 points")
    u = basis.breaks
    mids = (u[:-1] + u[1:]) / 2
    D3 = bspline_design(basis.knots, mids, 3, deriv=3)
    return np.vstack([D3[1] - D3[0], D3[-1] - D3[-2]])


def _objective(basis, obs, coef, lam_u):
    r = obs - basis.B @ coef
    pen = basis.root @ coef
    return float(r @ r + lam_u * (pen @ pen))


def fit_smoother(times, obs, lam, degree=3, penalty_order=2) -> SplineFit:
    """Minimize ``sum (obs - y(t))^2 + lam * integral(y''(t)^2 dt)``.

    With ``lam == 0`` the basis is larger than the data, so the interpolating
    cubic with not-a-knot end conditions is returned (it reproduces cubics).
    """
    basis = _basis(times, degree, penalty_order)
    obs = _check_obs(basis, obs)
    if not np.isfinite(lam) or lam < 0:
        raise SplineError("lam must be a finite nonnegative number")
    if lam == 0:
        A = np.vstack([basis.B, _not_a_knot_rows(basis)])
        rhs = np.r_[obs, 0.0, 0.0]
        try:
            coef = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SplineError("singular interpolation system") from exc
        lam_u = 0.0
    else:
        lam_u = _unit_lambda(lam, basis)
        coef = _penalized_lstsq(basis, obs, lam_u)
    return SplineFit(
        np.asarray(times, dtype=float).copy(),
        coef,
        float(lam),
        _objective(basis, obs, coef, lam_u),
        degree,
        penalty_order,
    )


def default_lambda_grid(times, n=25):
    """Log-spaced grid on ``[1e-6, 1e3] * (t_L - t_0)**3 / L``."""
    times = np.asarray(times, dtype=float)
    scale = (times[-1] - times[0]) ** 3 / len(times)
    return np.logspace(-6, 3, n) * scale


def cv_curve(times, obs, lambda_grid, folds=5, degree=3, penalty_order=2):
    """Mean out-of-fold squared error for every candidate penalty weight.

    Fold ``f`` holds out the time indices congruent to ``f`` modulo ``folds``;
    the held-out points keep their knots but get zero weight in the fit.
    """
    basis = _basis(times, degree, penalty_order)
    obs = _check_obs(basis, obs)
    L = len(obs)
    if not 2 <= folds <= L:
        raise SplineError(f"folds must lie in [2, {L}]")
    idx = np.arange(L)
    masks = [idx % folds == f for f in range(folds)]
    for f, held in enumerate(masks):
        if (~held).sum() < 4:
            raise SplineError(f"fold {f} leaves fewer than 4 training points")
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.size == 0 or np.any(lams <= 0):
        raise SplineError("lambda grid must be non-empty and positive")
    B, omega = basis.B, basis.omega
    errs = np.empty(len(lams))
    for a, lam in enumerate(lams):
        lam_u = _unit_lambda(lam, basis)
        sq = 0.0
        for held in masks:
            w = (~held).astype(float)
            H = (B * w[:, None]).T @ B + lam_u * omega
            coef = np.linalg.solve(H, B.T @ (w * obs))
            r = obs[held] - B[held] @ coef
            sq += r @ r
        errs[a] = sq / L
    return errs


def select_lambda_cv(times, obs, lambda_grid=None, folds=5, degree=3, penalty_order=2):
    """Cross-validated penalty weight; ties go to the larger value."""
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(times)
    lams = np.asarray(lambda_grid, dtype=float)
    errs = cv_curve(times, obs, lams, folds, degree, penalty_order)
    best = errs.min()
    tied = np.nonzero(errs <= best * (1 + 1e-12) + 1e-300)[0]
    return float(lams[tied[np.argmax(lams[tied])]])


def _constrained_affine(basis, obs, lam_u, D):
    """Constrained minimizer as an affine function of the constraint values.

    Returns ``(c0, Q, cond)`` with coefficients ``c0 + Q @ g_u`` for
    unit-time derivative values ``g_u``.  The equality constraints are
    eliminated through an orthonormal null-space basis of ``D``, leaving a
    small penalized least-squares problem in the free directions (this is
    the KKT solution, computed without forming the indefinite KKT matrix).
    """
    nb, nc = basis.n_basis, D.shape[0]
    U, sv, Vt = np.linalg.svd(D)
    if sv.size < nc or sv[-1] <= 1e-10 * sv[0]:
        raise SplineError("rank-deficient derivative constraint matrix")
    P = Vt[:nc].T @ (U.T / sv[:, None])  # right inverse of D
    N = Vt[nc:].T
    A = np.vstack([basis.B, basis.root * np.sqrt(lam_u)])
    rhs = np.r_[obs, np.zeros(A.shape[0] - basis.B.shape[0])]
    cond_d = sv[0] / sv[-1]
    if N.shape[1] == 0:
        return np.zeros(nb), P, cond_d
    AN = A @ N
    s2 = np.linalg.svd(AN, compute_uv=False)
    cond_r = s2[0] / s2[-1] if s2[-1] > 0 else np.inf
    cond = max(cond_d, cond_r)
    if not np.isfinite(cond) or 1.0 / cond < 1e-10:
        raise SplineError(f"constrained smoothing system numerically singular (condition estimate {cond:.3g})")
    ANp = np.linalg.pinv(AN)
    c0 = N @ (ANp @ rhs)
    Q = P - N @ (ANp @ (A @ P))
    return c0, Q, cond


def _constraint_rows(basis, at_times):
    at = np.asarray(at_times, dtype=float)
    u = (at - basis.t0) / basis.scale
    pos = np.searchsorted(basis.breaks, u)
    pos = np.clip(pos, 0, len(basis.breaks) - 1)
    if not np.allclose(basis.breaks[pos], u, rtol=0, atol=1e-12):
        raise SplineError("derivative constraints must sit on the fitting grid")
    return basis.D1[pos]


def fit_constrained_smoother(
    times, obs, lam, constraints: DerivativeConstraints, degree=3, penalty_order=2
) -> SplineFit:
    """Smoothing spline whose first derivative is pinned at the given times.

    The equality-constrained quadratic program is solved by eliminating the
    constraints (null-space method).
    """
    basis = _basis(times, degree, penalty_order)
    obs = _check_obs(basis, obs)
    if not np.isfinite(lam) or lam < 0:
        raise SplineError("lam must be a finite nonnegative number")
    D = _constraint_rows(basis, constraints.at_times)
    lam_u = _unit_lambda(lam, basis)
    c0, Q, _ = _constrained_affine(basis, obs, lam_u, D)
    coef = c0 + Q @ (constraints.values * basis.scale)
    return SplineFit(
        np.asarray(times, dtype=float).copy(),
        coef,
        float(lam),
        _objective(basis, obs, coef, lam_u),
        degree,
        penalty_order,
    )


class ConstrainedSmootherMap:
    """Affine map from derivative constraints to the constrained fit.

    For fixed grid, observations and penalty weight, the solution of the
    derivative-constrained smoother is affine in the constraint values ``g``
    (one per grid point, in time units).  This object precomputes that map,
    so evaluating the fit for many candidate constraint vectors costs a
    matrix product instead of a linear solve.

    ``fitted(g)`` returns fitted values at the grid; ``objective(g)`` the
    penalized objective.  Both accept a stacked ``(..., L)`` array.
    """

    def __init__(self, times, obs, lam, degree=3, penalty_order=2):
        basis = _basis(times, degree, penalty_order)
        self.obs = _check_obs(basis, obs)
        self.lam = float(lam)
        lam_u = _unit_lambda(lam, basis)
        D = basis.D1
        c0, Q, self.condition = _constrained_affine(basis, self.obs, lam_u, D)
        Q = Q * basis.scale
        self.base = basis.B @ c0
        self.gain = basis.B @ Q  # (L, L)
        self._c0, self._Q = c0, Q
        self._R = basis.root * np.sqrt(lam_u)

    def coefficients(self, g):
        return self._c0 + np.asarray(g, dtype=float) @ self._Q.T

    def fitted(self, g):
        return self.base + np.asarray(g) @ self.gain.T

    def objective(self, g):
        c = self.coefficients(g)
        r = self.obs - self.fitted(g)
        pen = np.sum((c @ self._R.T) ** 2, axis=-1)
        return np.sum(r * r, axis=-1) + pen
