"""Derivative-side estimation: GM/DM design problems, least squares, lasso.

Two regression problems link the target dynamics to candidate terms:

* gradient matching (GM) regresses smoothed target derivatives on term
  values at the observation times;
* difference matching (DM) regresses successive target differences on
  trapezoid-rule integrals of the term values.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path as _sk_lasso_path

from .kinetic_data import Dataset
from .spline import default_lambda_grid, fit_smoother, select_lambda_cv

__all__ = [
    "DesignProblem",
    "LassoPath",
    "RegressionError",
    "ConvergenceError",
    "term_matrix",
    "smooth_target",
    "gm_blocks",
    "dm_blocks",
    "build_gm_problem",
    "build_dm_problem",
    "ols_fit",
    "sign_constrained_ls",
    "lasso_path",
    "screen_terms",
]


class RegressionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class DesignProblem:
    X: np.ndarray
    y: np.ndarray
    row_meta: list = field(default_factory=list)
    term_meta: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise RegressionError(f"inconsistent shapes X{self.X.shape}, y{self.y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise RegressionError("non-finite design entries")


def term_matrix(terms, values, target_index=None):
    """Matrix of term values, shape (L, len(terms)), from a (d, L) trajectory."""
    values = np.asarray(values, dtype=float)
    d, L = values.shape
    ext = np.vstack([values, np.ones((1, L))])
    if target_index is not None:
        y = values[target_index]
        ext = np.vstack([ext, y, 2.0 - y])
    one, yrow, zrow = d, d + 1, d + 2
    idx = np.full((len(terms), 3), one)
    for c, t in enumerate(terms):
        idx[c, : len(t.vars)] = t.vars
        if t.aux is not None:
            if target_index is None:
                raise RegressionError("metabolic terms need the target index")
            idx[c, 2] = yrow if t.aux == "Y" else zrow
    return (ext[idx[:, 0]] * ext[idx[:, 1]] * ext[idx[:, 2]]).T


def smooth_target(dataset: Dataset, lambda_grid=None, folds=5, degree=3, penalty_order=2):
    """Cross-validated smoothing fit of the target in every repetition."""
    fits = []
    for _, _, rep in dataset.repetitions():
        y = rep.values[dataset.target_index]
        grid = default_lambda_grid(rep.times) if lambda_grid is None else lambda_grid
        lam = select_lambda_cv(rep.times, y, grid, folds, degree, penalty_order)
        fits.append(fit_smoother(rep.times, y, lam, degree, penalty_order))
    return fits


def _predictor_values(rep, smoothed, degree=3):
    if not smoothed:
        return rep.values
    out = np.empty_like(rep.values)
    for j, row in enumerate(rep.values):
        lam = select_lambda_cv(rep.times, row, default_lambda_grid(rep.times))
        out[j] = fit_smoother(rep.times, row, lam, degree).fitted_values()
    return out


def gm_blocks(dataset, terms, smoothing=None, smoothed_predictors=False):
    """Per-repetition GM rows ``(term values, spline derivative)``."""
    if not terms:
        raise RegressionError("empty term list")
    if smoothing is None:
        smoothing = smooth_target(dataset)
    if len(smoothing) != dataset.n:
        raise RegressionError("need one smoothing fit per repetition")
    blocks = []
    for fit, (_, _, rep) in zip(smoothing, dataset.repetitions()):
        X = _predictor_values(rep, smoothed_predictors)
        blocks.append((term_matrix(terms, X, dataset.target_index), fit(rep.times, 1)))
    return blocks


def dm_blocks(dataset, terms, smooth_response=False, smoothing=None):
    """Per-repetition DM rows ``(trapezoid integrals, target differences)``."""
    if not terms:
        raise RegressionError("empty term list")
    if smooth_response and smoothing is None:
        smoothing = smooth_target(dataset)
    blocks = []
    for i, (_, _, rep) in enumerate(dataset.repetitions()):
        F = term_matrix(terms, rep.values, dataset.target_index)
        dt = np.diff(rep.times)
        Z = (F[1:] + F[:-1]) / 2 * dt[:, None]
        y = smoothing[i].fitted_values() if smooth_response else rep.values[dataset.target_index]
        blocks.append((Z, np.diff(y)))
    return blocks


def _stack(dataset, blocks, terms, offset):
    rows = []
    for (k, r, _), (Z, _) in zip(dataset.repetitions(), blocks):
        rows += [((dataset.experiments[k].id, r), ell + offset) for ell in range(len(Z))]
    X = np.vstack([Z for Z, _ in blocks])
    y = np.concatenate([v for _, v in blocks])
    return DesignProblem(X, y, rows, list(terms))


def build_gm_problem(dataset, terms, smoothing=None, smoothed_predictors=False):
    blocks = gm_blocks(dataset, terms, smoothing, smoothed_predictors)
    return _stack(dataset, blocks, terms, 0)


def build_dm_problem(dataset, terms, smooth_response=False, smoothing=None):
    """Rows are indexed by the right end ``ell`` of each interval."""
    blocks = dm_blocks(dataset, terms, smooth_response, smoothing)
    return _stack(dataset, blocks, terms, 1)


# ----------------------------------------------------------- least squares


def _as_xy(problem):
    if isinstance(problem, DesignProblem):
        return problem.X, problem.y
    X, y = problem
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def ols_fit(problem):
    """Least-squares coefficients via an SVD-based solver.

    Rank-deficient designs get the minimum-norm solution and a warning.
    """
    X, y = _as_xy(problem)
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        warnings.warn("rank-deficient design; returning the minimum-norm solution", RuntimeWarning)
    elif sv.size and sv[0] / sv[-1] > 1e10:
        warnings.warn(f"ill-conditioned design (condition {sv[0] / sv[-1]:.3g})", RuntimeWarning)
    return coef


def _flip(signs):
    flip = np.array([-1.0 if s == "nonpos" else 1.0 for s in signs])
    bounded = np.array([s != "free" for s in signs])
    return flip, bounded


def sign_constrained_ls(problem, signs, max_iter=None):
    """Least squares with per-coefficient sign constraints.

    ``signs`` holds ``"free"``, ``"nonneg"`` or ``"nonpos"`` per column.
    Active-set method (Lawson--Hanson with unconstrained coordinates kept in
    the passive set throughout).
    """
    X, y = _as_xy(problem)
    n = X.shape[1]
    if len(signs) != n:
        raise RegressionError("one sign per column required")
    flip, bounded = _flip(signs)
    A = X * flip
    max_iter = 10 * n if max_iter is None else max_iter
    scale = max(np.max(np.abs(A.T @ y)), 1.0) if n else 1.0
    tol = 1e-12 * scale * max(A.shape)
    passive = ~bounded
    x = np.zeros(n)

    def ls(P):
        z = np.zeros(n)
        if P.any():
            z[P] = np.linalg.lstsq(A[:, P], y, rcond=None)[0]
        return z

    x = ls(passive)
    it = 0
    while True:
        w = A.T @ (y - A @ x)
        cand = bounded & ~passive & (w > tol)
        if not cand.any():
            break
        j = np.flatnonzero(cand)[np.argmax(w[cand])]
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise ConvergenceError(f"sign-constrained least squares did not converge in {max_iter} iterations")
            z = ls(passive)
            bad = passive & bounded & (z <= 0)
            if not bad.any():
                x = z
                break
            alpha = np.min(x[bad] / (x[bad] - z[bad]))
            x = x + alpha * (z - x)
            drop = bounded & passive & (x <= tol * 1e-3)
            x[drop] = 0.0
            passive &= ~drop
    x[bounded] = np.maximum(x[bounded], 0.0)
    return x * flip


def sign_ls_bruteforce(X, y, signs):
    """Exhaustive search over supports of the sign-constrained coordinates."""
    X, y = np.asarray(X, float), np.asarray(y, float)
    flip, bounded = _flip(signs)
    A = X * flip
    n = A.shape[1]
    bidx = np.flatnonzero(bounded)
    best, best_x = np.inf, None
    for r in range(len(bidx) + 1):
        for zeroed in itertools.combinations(bidx, r):
            P = np.ones(n, dtype=bool)
            P[list(zeroed)] = False
            z = np.zeros(n)
            if P.any():
                z[P] = np.linalg.lstsq(A[:, P], y, rcond=None)[0]
            if np.any(z[bounded] < -1e-12):
                continue
            obj = np.sum((y - A @ z) ** 2)
            if obj < best - 1e-12:
                best, best_x = obj, z
    return best_x * flip


# ------------------------------------------------------------------ lasso


@dataclass
class LassoPath:
    lambdas: np.ndarray
    entrance_order: np.ndarray
    entrance_step: np.ndarray  # path index of first activation, -1 if never
    coefs: np.ndarray  # (n_lambda, n_columns), original column scale
    unconverged: int = 0

    def coefficients_at(self, lam):
        """Coefficients at the path value closest to ``lam`` (from above)."""
        i = np.searchsorted(-self.lambdas, -lam, side="right") - 1
        return self.coefs[max(i, 0)]


def lasso_path(problem, n_lambda=100, eps=1e-3, tol=1e-7, max_iter=10_000, lambdas=None,
               standardize="center"):
    """Lasso path with recorded entrance order.

    Columns and response are centred (unpenalized intercept).  With
    ``standardize="center"`` all columns share one scale factor, so large
    terms are penalized relatively less; ``"unit_norm"`` scales every column
    to unit norm.  The penalty sequence runs geometrically from
    ``lambda_max = max|X'y| / rows`` down to ``eps * lambda_max``; each point
    is solved by coordinate descent (scikit-learn, Gram-based, warm started)
    to a duality gap of ``tol`` on the unit-norm response.

    A column enters at the first path point where its coefficient is nonzero
    or its residual correlation attains the penalty bound (so exact
    duplicates enter together).  Columns entering at the same point are
    ordered by residual correlation at the previous point, then by index.
    Columns that never enter follow in index order.
    """
    X, y = _as_xy(problem)
    rows, p = X.shape
    if p == 0:
        raise RegressionError("no columns")
    if lambdas is None and n_lambda < 2:
        raise RegressionError("need at least two penalty values")
    if standardize not in ("center", "unit_norm"):
        raise RegressionError("standardize must be 'center' or 'unit_norm'")
    Xc = X - X.mean(axis=0)
    norms = np.linalg.norm(Xc, axis=0)
    usable = norms > 1e-12 * max(norms.max(), 1e-300)
    if standardize == "center":
        # one common scale keeps the relative column magnitudes
        norms = np.where(usable, np.max(norms), 1.0)
    Xs = np.where(usable, Xc / np.where(usable, norms, 1.0), 0.0)
    yc = y - y.mean()
    ynorm = np.linalg.norm(yc)
    ys = yc / ynorm if ynorm > 0 else yc
    G = Xs.T @ Xs
    c0 = Xs.T @ ys
    lam_max = np.max(np.abs(c0)) / rows
    if lambdas is None:
        lambdas = (lam_max if lam_max > 0 else 1.0) * np.geomspace(1.0, eps, n_lambda)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size < 2 or np.any(np.diff(lambdas) > 0) or np.any(lambdas <= 0):
        raise RegressionError("penalty values must be positive and decreasing")
    unconverged = 0
    if lam_max > 0:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            _, beta, _ = _sk_lasso_path(
                Xs, ys, alphas=lambdas, precompute=G, Xy=c0, tol=tol, max_iter=max_iter
            )
        unconverged = sum(issubclass(w.category, ConvergenceWarning) for w in caught)
        beta = beta.T
    else:
        beta = np.zeros((lambdas.size, p))
    if unconverged:
        warnings.warn(f"lasso did not reach tolerance at {unconverged} path points", RuntimeWarning)
    beta[:, ~usable] = 0.0
    grads = (c0[None, :] - beta @ G)  # residual correlations per path point
    active = usable & ((beta != 0) | (np.abs(grads) >= lambdas[:, None] * rows * (1 - 1e-6)))
    if lam_max <= 0:
        active[:] = False
    entered = np.full(p, -1)
    order = []
    prev = c0
    for step in range(lambdas.size):
        new = np.flatnonzero(active[step] & (entered < 0))
        if new.size:
            key = np.round(np.abs(prev[new]), 12)
            new = new[np.lexsort((new, -key))]
            entered[new] = step
            order.extend(new.tolist())
        prev = grads[step]
    rest = [j for j in range(p) if entered[j] < 0]
    scale = np.where(usable, ynorm / np.where(usable, norms, 1.0), 0.0)
    return LassoPath(lambdas, np.array(order + rest, dtype=int), entered, beta * scale, unconverged)


def screen_terms(dataset, candidate_terms, keep, method="dm", n_lambda=100, smoothing=None, smooth_response=False,
                 standardize="center"):
    """First ``keep`` terms by lasso entrance order on the DM or GM problem."""
    candidate_terms = list(candidate_terms)
    if not 1 <= keep <= len(candidate_terms):
        raise RegressionError(f"keep must lie in [1, {len(candidate_terms)}]")
    if method == "dm":
        problem = build_dm_problem(dataset, candidate_terms, smooth_response, smoothing)
    elif method == "gm":
        problem = build_gm_problem(dataset, candidate_terms, smoothing)
    else:
        raise RegressionError(f"unknown screening method {method!r}")
    path = lasso_path(problem, n_lambda, standardize=standardize)
    return [candidate_terms[j] for j in path.entrance_order[:keep]]
