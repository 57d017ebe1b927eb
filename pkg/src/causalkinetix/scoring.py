"""Non-invariance scores of candidate target models.

For every repetition the target is smoothed freely (fit A) and again under
derivative constraints given by the candidate model fitted on a training
scope (fit B).  A model is stable when fit B is nearly as good as fit A on
every repetition.

Scoring many models reuses per-repetition precomputations: the constrained
fit is affine in the constraint values, and the model coefficients are
solved from per-experiment Gram matrices, so the cost per model is a few
small dense products.
"""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .kinetic_data import Dataset, DatasetError, check_valid
from .model_space import Model, ModelCollection
from .regression import RegressionError, sign_constrained_ls, term_matrix
from .spline import (
    ConstrainedSmootherMap,
    SplineError,
    default_lambda_grid,
    fit_smoother,
    select_lambda_cv,
)

__all__ = [
    "ScoreOptions",
    "ScoreReport",
    "ScoringContext",
    "Ranking",
    "ScoringError",
    "score_model",
    "rank_models",
    "rss",
    "RSS_FLOOR",
]

RSS_FLOOR = 1e-12
CHUNK = 8192
_RCOND = 1e-10


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreOptions:
    """Variants of the score.

    Parameters
    ----------
    fit_variant : {"leave_one_experiment_out", "pooled"}
        Training scope of the model coefficients used for a repetition.
    estimator : {"dm", "gm"}
        Difference matching (integrated) or gradient matching regression.
    divide_by_rss_a, use_abs_difference : bool
        Form of the per-repetition contribution ``|RSS_b - RSS_a| / RSS_a``.
    lambda_policy : "reuse_cv" or float
        Smoothing weight: per-repetition cross-validated value, or fixed.
    """

    fit_variant: str = "leave_one_experiment_out"
    estimator: str = "dm"
    divide_by_rss_a: bool = True
    use_abs_difference: bool = True
    lambda_policy: object = "reuse_cv"
    smoothed_predictors: bool = False
    dm_smooth_response: bool = False
    penalty_order: int = 2
    folds: int = 5

    def __post_init__(self):
        if self.fit_variant not in ("leave_one_experiment_out", "pooled"):
            raise ScoringError(f"unknown fit variant {self.fit_variant!r}")
        if self.estimator not in ("dm", "gm"):
            raise ScoringError(f"unknown estimator {self.estimator!r}")
        if self.lambda_policy != "reuse_cv":
            lam = float(self.lambda_policy)
            if not lam >= 0:
                raise ScoringError("fixed smoothing weight must be nonnegative")
        if self.penalty_order not in (2, 3):
            raise ScoringError("penalty order must be 2 or 3")

    @property
    def degree(self):
        return 3 if self.penalty_order == 2 else 5

    def to_dict(self):
        return asdict(self)


def rss(fit, grid, obs):
    """Mean squared deviation of ``fit`` from ``obs`` at the grid points."""
    grid = np.asarray(getattr(grid, "times", grid), dtype=float)
    obs = np.asarray(obs, dtype=float)
    if grid.shape != obs.shape:
        raise ScoringError("grid and observations differ in length")
    values = fit(grid) if callable(fit) else np.asarray(fit, dtype=float)
    return float(np.mean((values - obs) ** 2))


def combine(rss_a, rss_b, options: ScoreOptions):
    """Per-repetition contributions and their mean, vectorized over models."""
    diff = np.asarray(rss_b) - rss_a
    if options.use_abs_difference:
        diff = np.abs(diff)
    if options.divide_by_rss_a:
        diff = diff / np.maximum(rss_a, RSS_FLOOR)
    return diff.mean(axis=-1)


@dataclass
class ScoreReport:
    model: Model
    T: float
    rep_ids: list
    rss_a: np.ndarray
    rss_b: np.ndarray
    objective_a: np.ndarray | None = None
    objective_b: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def per_repetition(self):
        out = []
        for i, rid in enumerate(self.rep_ids):
            row = {"repetition": rid, "rss_a": float(self.rss_a[i]), "rss_b": float(self.rss_b[i])}
            if self.objective_a is not None:
                row["objective_a"] = float(self.objective_a[i])
            if self.objective_b is not None:
                row["objective_b"] = float(self.objective_b[i])
            out.append(row)
        return out

    def to_dict(self):
        return {
            "model": str(self.model),
            "terms": self.model.to_json(),
            "T": _num(self.T),
            "per_repetition": [
                {k: (list(v) if k == "repetition" else _num(v)) for k, v in row.items()}
                for row in self.per_repetition
            ],
            "diagnostics": {k: [_num(x) for x in v] for k, v in self.diagnostics.items()},
            "error": self.error,
        }

    def csv_rows(self):
        for i, (e, r) in enumerate(self.rep_ids):
            yield [str(self.model), _num(self.T), f"{e}/{r}", _num(self.rss_a[i]), _num(self.rss_b[i])]


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


class ScoringContext:
    """Per-repetition precomputations shared by all models of a dataset.

    Parameters
    ----------
    dataset : Dataset
    terms : sequence of Term
        Every term any scored model may use.
    options : ScoreOptions
    """

    def __init__(self, dataset: Dataset, terms, options: ScoreOptions = ScoreOptions()):
        check_valid(dataset, min_experiments=1)
        self.dataset = dataset
        self.options = options
        self.terms = list(terms)
        if not self.terms:
            raise ScoringError("no terms")
        for t in self.terms:
            if any(j >= dataset.d for j in t.vars):
                raise ScoringError(f"term {t} references a missing variable")
        self.term_index = {t: c for c, t in enumerate(self.terms)}
        if options.fit_variant == "leave_one_experiment_out" and dataset.m < 2:
            raise ScoringError("leave-one-experiment-out fitting needs at least 2 experiments")
        self._prepare()

    # --------------------------------------------------------------- setup

    def _lambda(self, times, y):
        opt = self.options
        if opt.lambda_policy == "reuse_cv":
            return select_lambda_cv(times, y, default_lambda_grid(times), opt.folds, opt.degree, opt.penalty_order)
        return float(opt.lambda_policy)

    def _prepare(self):
        ds, opt = self.dataset, self.options
        tgt = ds.target_index
        nterm = len(self.terms)
        m = ds.m
        self.rep_ids, self.rep_exp = [], []
        self.lams, self.rss_a, self.obj_a = [], [], []
        self.maps, self.F, self.A, self.u = [], [], [], []
        self.G = np.zeros((m, nterm, nterm))
        self.b = np.zeros((m, nterm))
        self.blocks = []
        for k, r, rep in ds.repetitions():
            t, y = rep.times, rep.values[tgt]
            lam = self._lambda(t, y)
            fit_a = fit_smoother(t, y, lam, opt.degree, opt.penalty_order)
            smap = ConstrainedSmootherMap(t, y, lam, opt.degree, opt.penalty_order)
            X = rep.values
            if opt.smoothed_predictors:
                X = np.array([
                    fit_smoother(t, row, self._lambda(t, row), opt.degree, opt.penalty_order).fitted_values()
                    for row in rep.values
                ])
            F = term_matrix(self.terms, X, tgt)
            if opt.estimator == "dm":
                Fr = term_matrix(self.terms, rep.values, tgt)
                Z = (Fr[1:] + Fr[:-1]) / 2 * np.diff(t)[:, None]
                resp = np.diff(fit_a.fitted_values() if opt.dm_smooth_response else y)
            else:
                Z = F
                resp = fit_a(t, 1)
            self.rep_ids.append((ds.experiments[k].id, r))
            self.rep_exp.append(k)
            self.lams.append(lam)
            self.rss_a.append(float(np.mean((fit_a.fitted_values() - y) ** 2)))
            self.obj_a.append(fit_a.objective)
            self.maps.append(smap)
            self.F.append(F)
            self.A.append(smap.gain @ F)
            self.u.append(y - smap.base)
            self.G[k] += Z.T @ Z
            self.b[k] += Z.T @ resp
            self.blocks.append((Z, resp))
        self.rss_a = np.array(self.rss_a)
        self.obj_a = np.array(self.obj_a)
        self.rep_exp = np.array(self.rep_exp)
        if np.any(self.rss_a < RSS_FLOOR) and opt.divide_by_rss_a:
            bad = [self.rep_ids[i] for i in np.flatnonzero(self.rss_a < RSS_FLOOR)]
            warnings.warn(f"RSS_a below {RSS_FLOOR} for repetitions {bad}; denominator floored "
                          "(consider the division-free score)", RuntimeWarning)
        Gt, bt = self.G.sum(axis=0), self.b.sum(axis=0)
        if opt.fit_variant == "pooled":
            self.scopes = [np.arange(m)] * m
            self.G_train = np.broadcast_to(Gt, self.G.shape)
            self.b_train = np.broadcast_to(bt, self.b.shape)
        else:
            self.scopes = [np.array([j for j in range(m) if j != k]) for k in range(m)]
            self.G_train = Gt - self.G
            self.b_train = bt - self.b

    @property
    def n(self):
        return len(self.rep_ids)

    def indices(self, model: Model):
        try:
            return [self.term_index[t] for t in model.terms]
        except KeyError as exc:
            raise ScoringError(f"term {exc.args[0]} not in the scoring context") from None

    # ------------------------------------------------------------- fitting

    def _theta_batch(self, S):
        """Coefficients per training scope, shape (m, N, k); NaN on failure."""
        m = self.dataset.m
        N, k = S.shape
        out = np.empty((m, N, k))
        for e in range(m):
            G = self.G_train[e][S[:, :, None], S[:, None, :]]
            b = self.b_train[e][S]
            out[e] = _psd_solve(G, b)
        return out

    def _theta_signed(self, idx, signs):
        out = []
        for e in range(self.dataset.m):
            rows = [self.blocks[i] for i in range(self.n) if self.rep_exp[i] in self.scopes[e]]
            Z = np.vstack([z[:, idx] for z, _ in rows])
            y = np.concatenate([v for _, v in rows])
            out.append(sign_constrained_ls((Z, y), signs))
        return np.array(out)

    def rss_b_batch(self, S, theta=None):
        """RSS of the constrained fits for models given as term-index rows."""
        S = np.asarray(S, dtype=int)
        if theta is None:
            theta = self._theta_batch(S)
        N = S.shape[0]
        out = np.empty((N, self.n))
        for i in range(self.n):
            th = theta[self.rep_exp[i]]  # (N, k)
            fitted = np.einsum("lnk,nk->nl", self.A[i][:, S], th)
            res = self.u[i] - fitted
            out[:, i] = np.mean(res * res, axis=1)
        return out

    def constraint_values(self, idx, theta):
        return [self.F[i][:, idx] @ theta[self.rep_exp[i]] for i in range(self.n)]

    # ------------------------------------------------------------- scoring

    def score(self, model: Model) -> ScoreReport:
        idx = self.indices(model)
        if model.sign_constrained:
            theta = self._theta_signed(idx, model.signs)
        else:
            theta = self._theta_batch(np.array([idx]))[:, 0, :]
        if not np.all(np.isfinite(theta)):
            return self._failed(model, "coefficient fit failed")
        g = self.constraint_values(idx, theta)
        rss_b = np.array([
            np.mean((self.dataset_obs(i) - self.maps[i].fitted(g[i])) ** 2) for i in range(self.n)
        ])
        obj_b = np.array([float(self.maps[i].objective(g[i])) for i in range(self.n)])
        T = float(combine(self.rss_a, rss_b, self.options))
        diag = {str(self.dataset.experiments[e].id): theta[e].tolist() for e in range(self.dataset.m)}
        return ScoreReport(model, T, list(self.rep_ids), self.rss_a.copy(), rss_b,
                           self.obj_a.copy(), obj_b, diag)

    def dataset_obs(self, i):
        return self.maps[i].obs

    def _failed(self, model, message):
        nan = np.full(self.n, np.nan)
        return ScoreReport(model, float("inf"), list(self.rep_ids), self.rss_a.copy(), nan, error=message)

    def score_many(self, models, workers=1):
        """T and RSS_b for every model, in input order.

        Returns ``(T, rss_b, errors)`` with ``errors[j]`` None or a message.
        """
        models = list(models)
        N = len(models)
        T = np.full(N, np.inf)
        R = np.full((N, self.n), np.nan)
        errors = [None] * N
        free = {}
        signed = []
        for j, mdl in enumerate(models):
            if mdl.sign_constrained:
                signed.append(j)
            else:
                free.setdefault(len(mdl), []).append(j)
        tasks = []
        for k in sorted(free):
            pos = np.array(free[k])
            S = np.array([self.indices(models[j]) for j in pos], dtype=int)
            for s in range(0, len(pos), CHUNK):
                tasks.append(("free", pos[s : s + CHUNK], S[s : s + CHUNK]))
        for s in range(0, len(signed), 256):
            chunk = signed[s : s + 256]
            tasks.append(("signed", np.array(chunk), [(self.indices(models[j]), models[j].signs) for j in chunk]))
        for pos, rss_b in _run_tasks(self, tasks, workers):
            R[pos] = rss_b
        ok = np.all(np.isfinite(R), axis=1)
        T[ok] = combine(self.rss_a, R[ok], self.options)
        for j in np.flatnonzero(~ok):
            errors[j] = "coefficient fit failed"
        return T, R, errors

    def _do_task(self, task):
        kind, pos, payload = task
        if kind == "free":
            return pos, self.rss_b_batch(payload)
        out = np.full((len(pos), self.n), np.nan)
        for r, (idx, signs) in enumerate(payload):
            try:
                theta = self._theta_signed(idx, signs)
            except (RegressionError, RuntimeError, np.linalg.LinAlgError):
                continue
            out[r] = self.rss_b_batch(np.array([idx]), theta[:, None, :])[0]
        return pos, out


def _psd_solve(G, b):
    """Batched least-squares solve of ``G x = b`` for symmetric PSD ``G``.

    Columns are equilibrated first; eigenvalues below ``_RCOND`` times the
    largest are dropped (minimum-norm solution in the scaled coordinates).
    """
    diag = np.einsum("nii->ni", G)
    bad = ~np.all(np.isfinite(G), axis=(1, 2))
    s = np.where(diag > 0, 1 / np.sqrt(np.where(diag > 0, diag, 1.0)), 0.0)
    Gs = G * s[:, :, None] * s[:, None, :]
    w, V = np.linalg.eigh(Gs)
    wmax = w[:, -1:]
    inv = np.where(w > _RCOND * wmax, 1 / np.where(w > 0, w, 1.0), 0.0)
    x = np.einsum("nij,nj,nkj,nk->ni", V, inv, V, b * s)
    x = x * s
    x[bad] = np.nan
    return x


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_task(task):
    return _WORKER_CTX._do_task(task)


def _run_tasks(ctx, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        for task in tasks:
            yield ctx._do_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as pool:
        # map preserves task order, so results do not depend on scheduling
        yield from pool.map(_worker_task, tasks)


def default_workers():
    env = os.environ.get("CKX_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ------------------------------------------------------------- public API


def score_model(dataset: Dataset, model: Model, options: ScoreOptions = ScoreOptions()) -> ScoreReport:
    """Non-invariance score of a single model with per-repetition detail."""
    try:
        ctx = ScoringContext(dataset, model.terms, options)
    except (SplineError, DatasetError) as exc:
        raise ScoringError(str(exc)) from exc
    return ctx.score(model)


class Ranking:
    """Models sorted by score; indexing yields :class:`ScoreReport` objects.

    Ties in ``T`` are broken by fewer terms, then by the model string.
    Models whose fit failed carry ``T = inf`` and an error message and are
    ranked last.
    """

    def __init__(self, context, models, T, rss_b, errors):
        self.context = context
        keys = [(T[j] if np.isfinite(T[j]) else np.inf, len(mdl), str(mdl)) for j, mdl in enumerate(models)]
        order = sorted(range(len(models)), key=keys.__getitem__)
        self.order = np.array(order, dtype=int)
        self.models = [models[j] for j in order]
        self.T = np.asarray(T)[self.order]
        self.rss_b = rss_b[self.order]
        self.errors = [errors[j] for j in order]

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        ctx = self.context
        return ScoreReport(self.models[i], float(self.T[i]), list(ctx.rep_ids), ctx.rss_a.copy(),
                           self.rss_b[i].copy(), error=self.errors[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def detailed(self, i):
        """Full report (objectives, coefficients) for the ``i``-th model."""
        return self.context.score(self.models[i])

    def to_json(self, top=None):
        top = len(self) if top is None else min(top, len(self))
        return {
            "options": self.context.options.to_dict(),
            "repetitions": [list(r) for r in self.context.rep_ids],
            "rss_a": [_num(x) for x in self.context.rss_a],
            "models": [
                {"rank": i + 1, "model": str(self.models[i]), "T": _num(self.T[i]),
                 "rss_b": [_num(x) for x in self.rss_b[i]], "error": self.errors[i]}
                for i in range(top)
            ],
        }

    def to_csv(self, top=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "T", "rep", "rss_a", "rss_b"])
        top = len(self) if top is None else min(top, len(self))
        for i in range(top):
            for row in self[i].csv_rows():
                w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        return buf.getvalue()


def rank_models(dataset: Dataset, collection, options: ScoreOptions = ScoreOptions(),
                workers=1, context=None) -> Ranking:
    """Score every model of ``collection`` and sort ascending by ``T``."""
    models = list(collection.models if isinstance(collection, ModelCollection) else collection)
    if not models:
        raise ScoringError("empty model collection")
    if context is None:
        terms = sorted({t for mdl in models for t in mdl.terms})
        context = ScoringContext(dataset, terms, options)
    T, R, errors = context.score_many(models, workers)
    return Ranking(context, models, T, R, errors)


def dump_ranking(ranking: Ranking, path, top=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ranking.to_json(top), fh, indent=1)
        fh.write("\n")
