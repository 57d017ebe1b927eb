"""Ranking metrics, baselines and the simulation-study drivers.

Every study draws its runs from per-run substreams of a master seed, so the
results do not depend on the number of workers.  A study returns an
:class:`ExperimentSummary`; ``write`` stores ``summary.json``, ``runs.csv``,
plot-data CSVs and (separately, since they vary between runs)
``timings.json``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .model_space import Term, all_terms, enumerate_main_effect
from .ode_sim import maillard_system, sample_dataset1, sample_dataset2, sample_dataset3, substream
from .regression import build_dm_problem, build_gm_problem, lasso_path, screen_terms
from .scoring import ScoreOptions, ScoringContext, rank_models
from .variable_ranking import build_collection, default_K, variable_scores

__all__ = [
    "RankingMetrics",
    "ExperimentSummary",
    "auroc",
    "roc_points",
    "false_discoveries",
    "rank_accuracy",
    "worst_true_rank",
    "lasso_variable_scores",
    "random_variable_scores",
    "ckx_variable_scores",
    "maillard_true_terms",
    "run_maillard_study",
    "run_noise_study",
    "run_consistency_study",
    "run_screening_study",
    "run_dataset2_study",
    "run_hidden_study",
    "run_overfitting_study",
    "run_arnoise_study",
    "run_scalability_probe",
    "loglog_slope",
    "STUDIES",
]

_RUN_SEED = 99


# ---------------------------------------------------------------- metrics


@dataclass
class RankingMetrics:
    auroc: float
    false_discoveries_before_full_recovery: int
    roc_points: list


def _as_scores(ranking, d=None):
    """Scores (higher = more likely a parent) from scores or an ordered list."""
    arr = np.asarray(ranking)
    if arr.dtype.kind in "iu" and d is not None:
        if sorted(arr.tolist()) != list(range(d)):
            raise ValueError("an ordered variable list must be a permutation")
        scores = np.empty(d)
        scores[arr] = d - np.arange(d)
        return scores
    return arr.astype(float)


def _truth_mask(truth, d):
    mask = np.zeros(d, dtype=bool)
    mask[list(truth)] = True
    if not mask.any():
        raise ValueError("truth must be non-empty")
    if mask.all():
        raise ValueError("truth must be a strict subset of the variables")
    return mask


def roc_points(scores, truth_mask):
    """ROC vertices from a threshold sweep over distinct scores."""
    pos, neg = truth_mask.sum(), (~truth_mask).sum()
    pts = [(0.0, 0.0)]
    for thr in np.unique(scores)[::-1]:
        sel = scores >= thr
        pts.append((float((sel & ~truth_mask).sum() / neg), float((sel & truth_mask).sum() / pos)))
    return pts


def false_discoveries(scores, truth_mask):
    """Non-parents scored at least as high as the lowest-scored parent."""
    worst = scores[truth_mask].min()
    return int(np.sum(scores[~truth_mask] >= worst))


def auroc(ranking, truth, d=None) -> RankingMetrics:
    """AUROC of variable scores (or an ordered variable list) against ``truth``.

    Mann--Whitney statistic with midranks; ties count one half.
    """
    d = len(ranking) if d is None else d
    scores = _as_scores(ranking, d)
    mask = _truth_mask(truth, scores.size)
    ranks = rankdata(scores)
    P, N = mask.sum(), (~mask).sum()
    auc = (ranks[mask].sum() - P * (P + 1) / 2) / (P * N)
    return RankingMetrics(float(auc), false_discoveries(scores, mask), roc_points(scores, mask))


def rank_accuracy(scores, invariant_flags):
    """1 minus the share of non-invariant models scored below the worst invariant one."""
    scores = np.asarray(scores, dtype=float)
    flags = np.asarray(invariant_flags, dtype=bool)
    if scores.shape != flags.shape:
        raise ValueError("scores and flags differ in length")
    if not flags.any() or flags.all():
        return 1.0
    worst = scores[flags].max()
    return float(1.0 - np.mean(scores[~flags] < worst))


def worst_true_rank(order, truth_terms):
    """Largest 1-based position of a true term; ``(rank, all_present)``."""
    pos = {t: i + 1 for i, t in enumerate(order)}
    truth = list(truth_terms)
    if not truth:
        raise ValueError("truth terms must be non-empty")
    missing = [t for t in truth if t not in pos]
    if missing:
        return len(order) + 1, False
    return max(pos[t] for t in truth), True


def loglog_slope(x, y):
    """Least-squares slope and R^2 of ``log y`` on ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - (res[0] / ss if res.size and ss > 0 else 0.0)
    return float(coef[0]), float(r2)


# -------------------------------------------------------------- baselines


def lasso_variable_scores(dataset, method="dm", terms=None):
    """Variables scored by the first lasso entrance of any term using them."""
    d = dataset.d
    terms = all_terms(d) if terms is None else list(terms)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        problem = build_dm_problem(dataset, terms) if method == "dm" else build_gm_problem(dataset, terms)
        path = lasso_path(problem)
    first = np.full(d, np.inf)
    for pos, c in enumerate(path.entrance_order):
        if path.entrance_step[c] < 0:
            break
        for j in terms[c].vars:
            first[j] = min(first[j], pos)
    return np.where(np.isfinite(first), -first, -len(terms) - 1.0)


def random_variable_scores(d, rng):
    return rng.permutation(d).astype(float)


def ckx_variable_scores(dataset, keep=33, p=4, options=None, model_class="exhaustive", K="auto"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        collection = build_collection(dataset, model_class, p, keep)
        ranking = rank_models(dataset, collection, options or ScoreOptions())
    K = min(default_K(dataset.d, p), len(ranking)) if K == "auto" else K
    vr = variable_scores(ranking, K, dataset.d, dataset.variable_names)
    return vr.scores, vr, ranking


def maillard_true_terms(target):
    """Terms of the target's rate equation (reactant products)."""
    system = maillard_system()
    S = system.stoichiometry
    terms = {Term(rx.reactants) for r, rx in enumerate(system.reactions) if S[target, r] != 0}
    return sorted(terms)


# ---------------------------------------------------------------- summary


@dataclass
class ExperimentSummary:
    study: str
    config: dict
    runs: list
    aggregates: dict
    seeds: list
    wall_times: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def to_dict(self):
        return {"study": self.study, "config": self.config, "aggregates": self.aggregates,
                "seeds": self.seeds, "n_runs": len(self.runs)}

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        files = []
        _dump_json(os.path.join(out_dir, "summary.json"), _clean(self.to_dict()))
        files.append("summary.json")
        _write_rows(os.path.join(out_dir, "runs.csv"), self.runs)
        files.append("runs.csv")
        for name, rows in self.tables.items():
            _write_rows(os.path.join(out_dir, name), rows)
            files.append(name)
        _dump_json(os.path.join(out_dir, "timings.json"), {"wall_times": self.wall_times})
        return files


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_rows(path, rows):
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row.get(k, "")) for k in keys])


def _stats(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"n": 0}
    q = np.quantile(v, [0.1, 0.25, 0.5, 0.75, 0.9])
    return {"n": int(v.size), "mean": float(v.mean()), "median": float(q[2]), "q10": float(q[0]),
            "q25": float(q[1]), "q75": float(q[3]), "q90": float(q[4])}


def run_seed(seed, *key):
    return int(substream(seed, _RUN_SEED, *key).integers(2**62))


def _parallel(fn, jobs, workers):
    """Apply ``fn`` to every job, preserving order; failures are recorded."""
    if workers is None:
        workers = 1
    if workers <= 1 or len(jobs) <= 1:
        return [_guarded(fn, j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_guarded, [fn] * len(jobs), jobs))


def _guarded(fn, job):
    t0 = time.perf_counter()
    try:
        out = fn(job)
        out["error"] = ""
    except Exception as exc:  # recorded per run, never fatal for the study
        out = {"error": f"{type(exc).__name__}: {exc}"}
    out["_wall"] = time.perf_counter() - t0
    return out


def _finish(study, config, jobs, results, metric_keys, tables=None, extra=None):
    runs, walls = [], []
    for job, res in zip(jobs, results):
        walls.append(res.pop("_wall"))
        runs.append({**{k: v for k, v in job.items() if not isinstance(v, (dict, list))}, **res})
    aggregates = {k: _stats([r.get(k) for r in runs if r.get(k, "") != ""]) for k in metric_keys}
    aggregates["failed_runs"] = sum(1 for r in runs if r.get("error"))
    if extra:
        aggregates.update(extra(runs))
    seeds = [job["seed"] for job in jobs]
    return ExperimentSummary(study, config, runs, aggregates, seeds, walls, tables or {})


# ---------------------------------------------------------- run functions


def _method_scores(ds, method, rng, keep, p, options):
    if method == "ckx":
        return ckx_variable_scores(ds, keep, p, options)[0]
    if method in ("dm", "gm"):
        return lasso_variable_scores(ds, method)
    if method == "random":
        return random_variable_scores(ds.d, rng)
    raise ValueError(f"unknown method {method!r}")


def _maillard_run(job):
    sim = sample_dataset1(job["seed"], L=job["L"], c=job.get("c"), noise_kind=job.get("noise_kind", "iid"),
                          ar=job.get("ar", 0.0))
    rng = substream(job["seed"], 7)
    perm = rng.permutation(sim.dataset.d)
    ds = sim.dataset.permute_variables(perm)
    truth = [i for i in range(ds.d) if perm[i] in sim.truth]
    options = ScoreOptions(fit_variant=job.get("fit_variant", "leave_one_experiment_out"))
    out = {"target": sim.dataset.target, "n_parents": len(truth), "c": sim.info["c"]}
    for method in job["methods"]:
        scores = _method_scores(ds, method, rng, job["keep"], job["p"], options)
        met = auroc(scores, truth)
        out[f"auroc_{method}"] = met.auroc
        out[f"fd_{method}"] = met.false_discoveries_before_full_recovery
        out[f"roc_{method}"] = met.roc_points
    return out


def _roc_table(runs, methods):
    rows = []
    for i, r in enumerate(runs):
        for m in methods:
            for fpr, tpr in r.pop(f"roc_{m}", []) or []:
                rows.append({"run": i, "method": m, "fpr": fpr, "tpr": tpr})
    return rows


def run_maillard_study(B=50, L=11, methods=("ckx", "dm", "gm", "random"), seed=1, keep=33, p=4,
                       workers=1, c=None) -> ExperimentSummary:
    """Variable-ranking benchmark on relabelled Maillard data."""
    methods = list(methods)
    jobs = [{"run": b, "seed": run_seed(seed, b), "L": L, "keep": keep, "p": p, "methods": methods, "c": c}
            for b in range(B)]
    results = _parallel(_maillard_run, jobs, workers)
    keys = [f"{k}_{m}" for m in methods for k in ("auroc", "fd")]
    summary = _finish("maillard", {"B": B, "L": L, "methods": methods, "seed": seed, "keep": keep, "p": p, "c": c},
                      jobs, results, keys)
    summary.tables["roc.csv"] = _roc_table(summary.runs, methods)
    for m in methods:
        fds = [r[f"fd_{m}"] for r in summary.runs if not r.get("error")]
        summary.aggregates[f"zero_fd_fraction_{m}"] = float(np.mean([f == 0 for f in fds])) if fds else None
        summary.aggregates[f"median_auroc_{m}"] = summary.aggregates[f"auroc_{m}"].get("median")
        summary.aggregates[f"mean_auroc_{m}"] = summary.aggregates[f"auroc_{m}"].get("mean")
    if "ckx" in methods:
        summary.aggregates["median_auroc"] = summary.aggregates["median_auroc_ckx"]
    return summary


def run_noise_study(c_values=(0.05, 0.2, 0.5, 1.0), B=20, L=11, methods=("ckx", "dm"), seed=2, keep=20, p=4,
                    workers=1) -> ExperimentSummary:
    """Maillard benchmark at fixed relative noise levels."""
    methods = list(methods)
    jobs = [{"run": b, "c": float(c), "seed": run_seed(seed, i, b), "L": L, "keep": keep, "p": p, "methods": methods}
            for i, c in enumerate(c_values) for b in range(B)]
    results = _parallel(_maillard_run, jobs, workers)
    keys = [f"auroc_{m}" for m in methods]
    summary = _finish("noise", {"c_values": list(c_values), "B": B, "L": L, "methods": methods, "seed": seed,
                                "keep": keep, "p": p}, jobs, results, keys)
    rows = []
    for c in c_values:
        sel = [r for r in summary.runs if r["c"] == c and not r.get("error")]
        row = {"c": float(c)}
        for m in methods:
            v = [r[f"auroc_{m}"] for r in sel]
            row[f"median_auroc_{m}"] = float(np.median(v)) if v else float("nan")
            row[f"mean_auroc_{m}"] = float(np.mean(v)) if v else float("nan")
        rows.append(row)
        for r in sel:
            for m in methods:
                r.pop(f"roc_{m}", None)
    for r in summary.runs:
        for m in methods:
            r.pop(f"roc_{m}", None)
    summary.tables["auroc_by_noise.csv"] = rows
    summary.aggregates["by_noise"] = rows
    return summary


def _consistency_run(job):
    L = job["L"]
    sim = sample_dataset1(job["seed"], L=L, m=job["m"], noise_scale=math.sqrt(10.0) / L)
    ds = sim.dataset
    truth_terms = maillard_true_terms(ds.target_index)
    p = len(truth_terms) + 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        collection = build_collection(ds, "exhaustive", p, job["keep"], force_terms=truth_terms)
        ranking = rank_models(ds, collection, ScoreOptions())
    flags = [set(truth_terms) <= set(mdl.terms) for mdl in ranking.models]
    return {"target": ds.target, "n_models": len(ranking), "n_invariant": int(sum(flags)),
            "rank_accuracy": rank_accuracy(ranking.T, flags)}


def run_consistency_study(L_values=(11, 21, 41), B=20, m=10, seed=3, keep=20, workers=1) -> ExperimentSummary:
    """RankAccuracy for increasing grid size with noise variance shrinking like 10 / L^2.

    Models that contain every term of the true rate equation are treated as
    the invariant ones.
    """
    L_values = list(L_values)
    if any(b <= a for a, b in zip(L_values, L_values[1:])):
        raise ValueError("L values must be increasing")
    jobs = [{"run": b, "L": L, "m": m, "keep": keep, "seed": run_seed(seed, L, b)} for L in L_values for b in range(B)]
    results = _parallel(_consistency_run, jobs, workers)
    summary = _finish("consistency", {"L_values": L_values, "B": B, "m": m, "seed": seed, "keep": keep},
                      jobs, results, ["rank_accuracy"])
    rows = []
    for L in L_values:
        v = [r["rank_accuracy"] for r in summary.runs if r["L"] == L and not r.get("error")]
        rows.append({"L": L, "median_rank_accuracy": float(np.median(v)) if v else float("nan"),
                     "mean_rank_accuracy": float(np.mean(v)) if v else float("nan"), "n": len(v)})
    summary.tables["rankaccuracy_by_L.csv"] = rows
    summary.aggregates["by_L"] = rows
    return summary


def _screening_run(job):
    sim = sample_dataset1(job["seed"], L=job["L"])
    ds = sim.dataset
    truth = maillard_true_terms(ds.target_index)
    terms = all_terms(ds.d)
    out = {"target": ds.target, "n_true_terms": len(truth)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for method in ("dm", "gm"):
            order = screen_terms(ds, terms, len(terms), method=method)
            out[f"worst_rank_{method}"] = worst_true_rank(order, truth)[0]
    rng = substream(job["seed"], 8)
    order = [terms[i] for i in rng.permutation(len(terms))]
    out["worst_rank_random"] = worst_true_rank(order, truth)[0]
    return out


def run_screening_study(B=200, L=11, seed=4, workers=1) -> ExperimentSummary:
    """Worst rank of a true term under DM, GM and random term orderings."""
    jobs = [{"run": b, "L": L, "seed": run_seed(seed, b)} for b in range(B)]
    results = _parallel(_screening_run, jobs, workers)
    keys = ["worst_rank_dm", "worst_rank_gm", "worst_rank_random"]
    summary = _finish("screening", {"B": B, "L": L, "seed": seed}, jobs, results, keys)
    hist = []
    n_terms = len(all_terms(11))
    for method in ("dm", "gm", "random"):
        counts = np.bincount([r[f"worst_rank_{method}"] for r in summary.runs if not r.get("error")],
                             minlength=n_terms + 2)
        hist += [{"method": method, "worst_rank": k, "count": int(c)} for k, c in enumerate(counts) if k > 0]
    summary.tables["screening_hist.csv"] = hist
    return summary


def _dataset2_run(job):
    sim = sample_dataset2(job["seed"])
    ds, truth = sim.dataset, sim.truth
    rng = substream(job["seed"], 7)
    out = {"c": sim.info["c"]}
    for method in job["methods"]:
        if method == "ckx":
            scores = ckx_variable_scores(ds, job["keep"], job["p"])[0]
        elif method == "ckx_main_effect":
            scores = ckx_variable_scores(ds, None, 9, model_class="main_effect")[0]
        else:
            scores = _method_scores(ds, method, rng, None, None, None)
        out[f"auroc_{method}"] = auroc(scores, truth).auroc
    return out


def run_dataset2_study(B=50, methods=("ckx", "dm", "gm", "random"), seed=5, keep=39, p=3,
                       workers=1) -> ExperimentSummary:
    """Sigmoid-predictor benchmark; the target is the last variable."""
    methods = list(methods)
    jobs = [{"run": b, "seed": run_seed(seed, b), "keep": keep, "p": p, "methods": methods} for b in range(B)]
    results = _parallel(_dataset2_run, jobs, workers)
    keys = [f"auroc_{m}" for m in methods]
    summary = _finish("dataset2", {"B": B, "methods": methods, "seed": seed, "keep": keep, "p": p},
                      jobs, results, keys)
    for m in methods:
        summary.aggregates[f"median_auroc_{m}"] = summary.aggregates[f"auroc_{m}"].get("median")
    if "ckx" in methods:
        summary.aggregates["median_auroc"] = summary.aggregates["median_auroc_ckx"]
    return summary


HIDDEN_SETTINGS = {"observed": ("narrow", False), "hidden_narrow": ("narrow", True), "hidden_wide": ("wide", True)}


def _hidden_run(job):
    mode, hide = HIDDEN_SETTINGS[job["setting"]]
    sim = sample_dataset3(job["seed"], k7_mode=mode, hide=hide)
    ds = sim.dataset
    scores, vr, _ = ckx_variable_scores(ds, None, job["p"])
    x3 = ds.variable_names.index("X3")
    # the target never feeds its own rate here; compare against the other predictors
    others = np.delete(scores, [x3, ds.target_index])
    out = {"x3_top": bool(scores[x3] > others.max()), "x3_score": float(scores[x3]),
           "x3_pvalue": float(vr.p_values[x3]), "top_variable": ds.variable_names[[j for j in vr.order if j != ds.target_index][0]],
           "n_significant_1pct": int(np.sum(vr.p_values < 0.01))}
    truth = sim.info["observed_truth"]
    if 0 < len(truth) < ds.d:
        out["auroc"] = auroc(scores, truth).auroc
    return out


def run_hidden_study(B=30, settings=("hidden_wide",), seed=6, p=3, workers=1) -> ExperimentSummary:
    """Hidden-species benchmark; reports how often X3 is ranked first."""
    settings = list(settings)
    jobs = [{"run": b, "setting": s, "p": p, "seed": run_seed(seed, i, b)} for i, s in enumerate(settings)
            for b in range(B)]
    results = _parallel(_hidden_run, jobs, workers)
    summary = _finish("hidden", {"B": B, "settings": settings, "seed": seed, "p": p}, jobs, results,
                      ["auroc", "n_significant_1pct"])
    for s in settings:
        v = [r["x3_top"] for r in summary.runs if r["setting"] == s and not r.get("error")]
        summary.aggregates[f"x3_top_fraction_{s}"] = float(np.mean(v)) if v else None
    return summary


def _overfit_run(job):
    sim = sample_dataset1(job["seed"], L=job["L"])
    rng = substream(job["seed"], 7)
    perm = rng.permutation(sim.dataset.d)
    ds = sim.dataset.permute_variables(perm)
    truth = [i for i in range(ds.d) if perm[i] in sim.truth]
    out = {"target": sim.dataset.target}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        collection = build_collection(ds, "exhaustive", job["p"], job["keep"])
    for name, variant in (("loo", "leave_one_experiment_out"), ("pooled", "pooled")):
        ranking = rank_models(ds, collection, ScoreOptions(fit_variant=variant))
        K = min(default_K(ds.d, job["p"]), len(ranking))
        out[f"auroc_{name}"] = auroc(variable_scores(ranking, K, ds.d).scores, truth).auroc
    out["auroc_gap"] = out["auroc_loo"] - out["auroc_pooled"]
    return out


def run_overfitting_study(p_values=(1, 2, 3, 4), B=20, L=11, keep=20, seed=7, workers=1) -> ExperimentSummary:
    """Held-out versus pooled coefficient fitting for growing model classes."""
    jobs = [{"run": b, "p": p, "L": L, "keep": keep, "seed": run_seed(seed, b)} for p in p_values for b in range(B)]
    results = _parallel(_overfit_run, jobs, workers)
    summary = _finish("overfitting", {"p_values": list(p_values), "B": B, "L": L, "keep": keep, "seed": seed},
                      jobs, results, ["auroc_loo", "auroc_pooled", "auroc_gap"])
    rows = []
    for p in p_values:
        sel = [r for r in summary.runs if r["p"] == p and not r.get("error")]
        rows.append({"p": p, **{f"mean_auroc_{k}": float(np.mean([r[f"auroc_{k}"] for r in sel])) if sel else float("nan")
                                for k in ("loo", "pooled")}})
    summary.tables["auroc_by_p.csv"] = rows
    summary.aggregates["by_p"] = rows
    return summary


def run_arnoise_study(a_values=(-0.6, -0.3, 0.0, 0.3, 0.6), B=20, L=11, keep=15, p=4, seed=8,
                      workers=1) -> ExperimentSummary:
    """Maillard benchmark with autoregressive measurement noise."""
    jobs = [{"run": b, "ar": float(a), "noise_kind": "ar1", "seed": run_seed(seed, b), "L": L, "keep": keep, "p": p,
             "methods": ["ckx"]} for a in a_values for b in range(B)]
    results = _parallel(_maillard_run, jobs, workers)
    summary = _finish("arnoise", {"a_values": list(a_values), "B": B, "L": L, "keep": keep, "p": p, "seed": seed},
                      jobs, results, ["auroc_ckx"])
    rows = []
    for a in a_values:
        v = [r["auroc_ckx"] for r in summary.runs if r["ar"] == a and not r.get("error")]
        rows.append({"a": float(a), "median_auroc": float(np.median(v)) if v else float("nan"),
                     "mean_auroc": float(np.mean(v)) if v else float("nan")})
    for r in summary.runs:
        r.pop("roc_ckx", None)
    summary.tables["auroc_by_ar.csv"] = rows
    summary.aggregates["by_ar"] = rows
    return summary


SCALABILITY_DEFAULTS = {"d": [16, 24, 36, 54], "R": [3, 6, 12, 24], "m": [3, 6, 12, 24], "L": [15, 30, 60, 120]}


def _time_ranking(ds, p=9):
    t0 = time.perf_counter()
    collection = enumerate_main_effect(ds.d, p)
    ranking = rank_models(ds, collection, ScoreOptions())
    variable_scores(ranking, min(default_K(ds.d, 3), len(ranking)), ds.d)
    return time.perf_counter() - t0


def run_scalability_probe(vary="d", values=None, repeats=3, seed=9, base=None) -> ExperimentSummary:
    """Wall time of a full main-effect variable ranking on sigmoid data.

    One parameter among ``d`` (number of predictors), ``R``, ``m`` and ``L``
    is varied; the median time over ``repeats`` is regressed on a log-log
    scale.
    """
    if vary not in SCALABILITY_DEFAULTS:
        raise ValueError(f"vary must be one of {sorted(SCALABILITY_DEFAULTS)}")
    values = list(values or SCALABILITY_DEFAULTS[vary])
    if len(values) < 3:
        raise ValueError("need at least 3 values for a slope")
    settings = {"d": 8, "R": 3, "m": 5, "L": 15, **(base or {})}
    runs, rows = [], []
    for v in values:
        cfg = {**settings, vary: v}
        sim = sample_dataset2(run_seed(seed, v), L=cfg["L"], m=cfg["m"], R=cfg["R"], n_predictors=cfg["d"] - 1)
        times = []
        for r in range(repeats):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                times.append(_time_ranking(sim.dataset))
        runs.append({"value": v, **{f"t{r}": t for r, t in enumerate(times)}})
        rows.append({"value": v, "median_seconds": float(np.median(times))})
    slope, r2 = loglog_slope([r["value"] for r in rows], [r["median_seconds"] for r in rows])
    config = {"vary": vary, "values": values, "repeats": repeats, "seed": seed, "base": settings}
    aggregates = {"slope": slope, "r2": r2, "timing_noise": r2 < 0.9}
    summary = ExperimentSummary("scalability", config, [], aggregates, [seed], [r["median_seconds"] for r in rows],
                                {"runtime_loglog.csv": rows})
    summary.runs = runs
    return summary


STUDIES = {
    "maillard": run_maillard_study,
    "noise": run_noise_study,
    "consistency": run_consistency_study,
    "screening": run_screening_study,
    "dataset2": run_dataset2_study,
    "hidden": run_hidden_study,
    "overfitting": run_overfitting_study,
    "arnoise": run_arnoise_study,
    "scalability": run_scalability_probe,
}
