"""scikit-learn style wrappers around the functional core.

The estimators follow the usual conventions: hyperparameters are set in
``__init__`` and stored verbatim, learned state gets a trailing underscore,
and ``get_params`` / ``set_params`` come from :class:`BaseEstimator`.
"""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .kinetic_data import Dataset, DatasetError, validate
from .model_space import Term, all_terms, metabolic_terms
from .regression import term_matrix, screen_terms
from .scoring import ScoreOptions
from .spline import eval_deriv, fit_smoother, select_lambda_cv
from .variable_ranking import build_collection, default_K, variable_scores

__all__ = [
    "SmoothingSpline",
    "TermScreener",
    "CausalKinetiX",
    "check_dataset",
    "check_time_series",
    "check_positive_int",
    "check_fitted",
]


# ------------------------------------------------------------ validation


def check_dataset(dataset):
    """Return ``dataset`` if it is a valid :class:`Dataset`, else raise."""
    if not isinstance(dataset, Dataset):
        raise TypeError(f"expected a Dataset, got {type(dataset).__name__}")
    report = validate(dataset)
    if not report.ok:
        raise DatasetError("invalid dataset", report)
    return dataset


def check_time_series(t, y, min_points=4):
    """Validate one trajectory; returns float arrays ``(t, y)``."""
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.shape != y.shape:
        raise ValueError(f"t and y differ in length ({t.size} vs {y.size})")
    if t.size < min_points:
        raise ValueError(f"need at least {min_points} time points")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time points must be strictly increasing")
    return t, y


def check_positive_int(value, name, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


# ------------------------------------------------------------ estimators


class SmoothingSpline(RegressorMixin, BaseEstimator):
    """Cubic smoothing spline with knots at the observation times.

    Parameters
    ----------
    lam : float or "cv"
        Roughness penalty weight, or ``"cv"`` for cross-validation.
    folds : int
        Number of interleaved folds when ``lam="cv"``.
    penalty_order : {2, 3}
        Order of the penalized derivative; 3 uses quintic splines.
    """

    def __init__(self, lam="cv", folds=5, penalty_order=2):
        self.lam = lam
        self.folds = folds
        self.penalty_order = penalty_order

    def fit(self, t, y):
        t, y = check_time_series(t, y)
        degree = 3 if self.penalty_order == 2 else 5
        if self.lam == "cv":
            lam = select_lambda_cv(t, y, folds=self.folds, degree=degree, penalty_order=self.penalty_order)
        else:
            lam = float(self.lam)
        self.fit_ = fit_smoother(t, y, lam, degree, self.penalty_order)
        self.lam_ = lam
        return self

    def predict(self, t):
        check_fitted(self, "fit_")
        return self.fit_(np.asarray(t, dtype=float))

    def derivative(self, t, order=1):
        check_fitted(self, "fit_")
        return eval_deriv(self.fit_, np.asarray(t, dtype=float), order)


class TermScreener(TransformerMixin, BaseEstimator):
    """Lasso-path screening of mass-action terms.

    ``fit`` takes a :class:`Dataset`; ``transform`` maps a dataset to the
    stacked term values of the retained terms (rows = repetitions x time).

    Parameters
    ----------
    keep : int
        Number of terms kept (first entrances along the path).
    method : {"dm", "gm"}
    terms : list of Term or "all" or "metabolic"
    """

    def __init__(self, keep=33, method="dm", terms="all"):
        self.keep = keep
        self.method = method
        self.terms = terms

    def _candidates(self, dataset):
        if self.terms == "all":
            return all_terms(dataset.d)
        if self.terms == "metabolic":
            return metabolic_terms(dataset.d, dataset.target_index)
        return [t if isinstance(t, Term) else Term(tuple(t)) for t in self.terms]

    def fit(self, dataset, y=None):
        check_dataset(dataset)
        keep = check_positive_int(self.keep, "keep")
        if self.method not in ("dm", "gm"):
            raise ValueError(f"method must be 'dm' or 'gm', got {self.method!r}")
        candidates = self._candidates(dataset)
        self.candidates_ = candidates
        self.selected_terms_ = screen_terms(dataset, candidates, min(keep, len(candidates)), method=self.method)
        self.n_variables_ = dataset.d
        return self

    def transform(self, dataset):
        check_fitted(self, "selected_terms_")
        check_dataset(dataset)
        if dataset.d != self.n_variables_:
            raise ValueError(f"dataset has {dataset.d} variables, screener was fitted on {self.n_variables_}")
        blocks = [term_matrix(self.selected_terms_, rep.values, dataset.target_index)
                  for _, _, rep in dataset.repetitions()]
        return np.vstack(blocks)

    def get_feature_names_out(self, input_features=None):
        check_fitted(self, "selected_terms_")
        return np.array([t.label() for t in self.selected_terms_], dtype=object)


class CausalKinetiX(BaseEstimator):
    """Invariance-based ranking of models and variables for one target.

    Parameters
    ----------
    model_class : {"exhaustive", "main_effect", "metabolic"}
    p : int
        Maximal number of terms per model (three for the metabolic class).
    keep : int or None
        Terms kept by screening; None scores the whole class.
    K : int or "auto"
        Number of top models used for the variable scores.
    screen_method : {"dm", "gm"}
    fit_variant, estimator, divide_by_rss_a, dm_smooth_response, penalty_order
        Passed to :class:`ScoreOptions`.
    workers : int
        Worker processes for scoring; the result does not depend on it.

    Attributes
    ----------
    ranking_ : Ranking
        Scored models, best first.
    variable_ranking_ : VariableRanking
    scores_ : ndarray
        Variable scores in column order.
    """

    def __init__(self, model_class="exhaustive", p=4, keep=None, K="auto", screen_method="dm",
                 fit_variant="leave_one_experiment_out", estimator="dm", divide_by_rss_a=True,
                 dm_smooth_response=False, penalty_order=2, workers=1):
        self.model_class = model_class
        self.p = p
        self.keep = keep
        self.K = K
        self.screen_method = screen_method
        self.fit_variant = fit_variant
        self.estimator = estimator
        self.divide_by_rss_a = divide_by_rss_a
        self.dm_smooth_response = dm_smooth_response
        self.penalty_order = penalty_order
        self.workers = workers

    def score_options(self):
        return ScoreOptions(fit_variant=self.fit_variant, estimator=self.estimator,
                            divide_by_rss_a=self.divide_by_rss_a, dm_smooth_response=self.dm_smooth_response,
                            penalty_order=self.penalty_order)

    def fit(self, dataset, y=None):
        from .scoring import rank_models

        check_dataset(dataset)
        p = check_positive_int(self.p, "p")
        keep = check_positive_int(self.keep, "keep", allow_none=True)
        workers = check_positive_int(self.workers, "workers")
        self.collection_ = build_collection(dataset, self.model_class, p, keep, self.screen_method)
        self.ranking_ = rank_models(dataset, self.collection_, self.score_options(), workers=workers)
        n = len(self.ranking_)
        if self.K == "auto":
            K = min(default_K(dataset.d, p), n)
        else:
            K = check_positive_int(self.K, "K")
            if K > n:
                raise ValueError(f"K={K} exceeds the number of models ({n})")
        self.K_ = K
        self.variable_ranking_ = variable_scores(self.ranking_, K, dataset.d, dataset.variable_names)
        self.scores_ = self.variable_ranking_.scores
        self.n_variables_ = dataset.d
        return self

    def transform(self, dataset=None):
        """Variable scores (one row)."""
        check_fitted(self, "scores_")
        return self.scores_[None, :]

    def fit_transform(self, dataset, y=None):
        return self.fit(dataset).transform()

    def predict(self, dataset=None):
        """Variable indices ordered from most to least likely parent."""
        check_fitted(self, "variable_ranking_")
        return np.asarray(self.variable_ranking_.order)

    @property
    def best_model_(self):
        check_fitted(self, "ranking_")
        return self.ranking_.models[0]
