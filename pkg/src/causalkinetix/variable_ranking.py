"""Variable scores from the best-ranked models, with hypergeometric p-values."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model_space import (
    Model,
    all_terms,
    enumerate_exhaustive,
    enumerate_main_effect,
    enumerate_metabolic,
    metabolic_terms,
)

__all__ = [
    "VariableRanking",
    "variable_scores",
    "default_K",
    "hypergeom_pvalue",
    "hypergeom_logpmf",
    "build_collection",
    "rank_variables",
]


def default_K(d, p):
    """``2d + C(d, 2) - p``, at least 1."""
    if d < 1 or p < 1:
        raise ValueError("d and p must be positive")
    return max(1, 2 * d + d * (d - 1) // 2 - p)


def _check_hyper(population, successes, draws):
    if not (0 <= successes <= population and 0 <= draws <= population):
        raise ValueError("need 0 <= successes, draws <= population")


def hypergeom_logpmf(x, population, successes, draws):
    _check_hyper(population, successes, draws)
    lo, hi = max(0, draws + successes - population), min(draws, successes)
    if not lo <= x <= hi:
        return -math.inf

    # exact integer binomials; the ratio is rounded once
    num = math.comb(successes, x) * math.comb(population - successes, draws - x)
    den = math.comb(population, draws)
    shift = max(0, den.bit_length() - num.bit_length() + 64)
    return math.log((num << shift) // den) - shift * math.log(2)


def hypergeom_pvalue(population, successes, draws, observed):
    """Upper tail ``P(X >= observed)`` of the hypergeometric distribution.

    Probabilities are built from the log-gamma pmf at the mode and the
    exact ratio recurrence between neighbours, then normalized by their
    compensated sum, which keeps the tail accurate near 1 and far out.
    """
    _check_hyper(population, successes, draws)
    if not 0 <= observed <= min(draws, successes):
        raise ValueError("observed must lie in [0, min(draws, successes)]")
    lo, hi = max(0, draws + successes - population), min(draws, successes)
    if observed <= lo:
        return 1.0
    N, K, n = population, successes, draws
    mode = min(hi, max(lo, int((n + 1) * (K + 1) // (N + 2))))
    w = {mode: 1.0}
    for x in range(mode, hi):
        w[x + 1] = w[x] * ((K - x) * (n - x)) / ((x + 1) * (N - K - n + x + 1))
    for x in range(mode, lo, -1):
        w[x - 1] = w[x] * (x * (N - K - n + x)) / ((K - x + 1) * (n - x + 1))
    total = math.fsum(w.values())
    tail = math.fsum(v for x, v in w.items() if x >= observed)
    return min(1.0, tail / total)


@dataclass
class VariableRanking:
    names: list
    scores: np.ndarray
    K: int
    p_values: np.ndarray
    population: int
    dependence_counts: np.ndarray
    top_counts: np.ndarray

    @property
    def order(self):
        """Variable indices sorted by descending score, ties by index."""
        return sorted(range(len(self.scores)), key=lambda j: (-self.top_counts[j], j))

    @property
    def ranks(self):
        r = np.empty(len(self.scores), dtype=int)
        r[self.order] = np.arange(1, len(self.scores) + 1)
        return r

    @property
    def ties(self):
        """Groups of variables sharing a score (only groups of size > 1)."""
        groups = {}
        for j in self.order:
            groups.setdefault(int(self.top_counts[j]), []).append(j)
        return [g for g in groups.values() if len(g) > 1]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "score", "p_value", "rank"])
        ranks = self.ranks
        for j in self.order:
            w.writerow([self.names[j], repr(float(self.scores[j])), repr(float(self.p_values[j])), int(ranks[j])])
        return buf.getvalue()

    def to_dict(self):
        return {
            "K": self.K,
            "population": self.population,
            "variables": [
                {"variable": self.names[j], "score": float(self.scores[j]), "p_value": float(self.p_values[j]),
                 "rank": int(self.ranks[j]), "dependence_count": int(self.dependence_counts[j])}
                for j in self.order
            ],
            "ties": [[self.names[j] for j in g] for g in self.ties],
        }


def _models_of(ranked):
    out = []
    for item in ranked:
        out.append(item if isinstance(item, Model) else item.model)
    return out


def variable_scores(ranked, K, d, names=None, universe=None) -> VariableRanking:
    """Fraction of the ``K`` best models that depend on each variable.

    Parameters
    ----------
    ranked : sequence
        Models (or score reports) in rank order; a :class:`Ranking` works.
    K : int
        Number of top models; ``1 <= K <= len(ranked)``.
    d : int
        Number of variables.
    universe : sequence of Model, optional
        Collection defining the null distribution; defaults to ``ranked``.
    """
    models = ranked.models if hasattr(ranked, "models") else _models_of(ranked)
    if not 1 <= K <= len(models):
        raise ValueError(f"K must lie in [1, {len(models)}]")
    pool = models if universe is None else _models_of(universe)
    counts = np.zeros(d, dtype=int)
    for mdl in pool:
        for j in mdl.variables():
            counts[j] += 1
    top = np.zeros(d, dtype=int)
    for mdl in models[:K]:
        for j in mdl.variables():
            top[j] += 1
    pvals = np.array([
        hypergeom_pvalue(len(pool), int(counts[j]), K, int(top[j])) for j in range(d)
    ])
    names = list(names) if names is not None else [f"X{j + 1}" for j in range(d)]
    return VariableRanking(names, top / K, int(K), pvals, len(pool), counts, top)


def build_collection(dataset, model_class="exhaustive", p=4, keep=None, screen_method="dm",
                     candidate_terms=None, force_terms=()):
    """Candidate models for ``dataset``, optionally after lasso screening.

    ``keep=None`` skips screening.  ``force_terms`` are added to the
    screened set (they displace the last screened terms).
    """
    from .regression import screen_terms

    d = dataset.d
    if model_class == "main_effect":
        return enumerate_main_effect(d, p)
    if candidate_terms is None:
        candidate_terms = metabolic_terms(d, dataset.target_index) if model_class == "metabolic" else all_terms(d)
    terms = list(candidate_terms)
    if keep is not None and keep < len(terms):
        order = screen_terms(dataset, terms, len(terms), method=screen_method)
        forced = [t for t in force_terms if t in terms]
        rest = [t for t in order if t not in forced]
        terms = forced + rest[: max(keep - len(forced), 0)]
        terms = sorted(terms, key=candidate_terms.index)
    if model_class == "metabolic":
        return enumerate_metabolic(d, terms, p)
    if model_class != "exhaustive":
        raise ValueError(f"unknown model class {model_class!r}")
    return enumerate_exhaustive(d, p, terms)


def rank_variables(dataset, model_class="exhaustive", p=4, keep=None, K="auto", options=None,
                   workers=1, screen_method="dm"):
    """Full variable ranking: screen, enumerate, score and aggregate.

    Returns ``(VariableRanking, Ranking)``.
    """
    from .scoring import ScoreOptions, rank_models

    collection = build_collection(dataset, model_class, p, keep, screen_method)
    ranking = rank_models(dataset, collection, options or ScoreOptions(), workers=workers)
    if K == "auto" or K is None:
        K = min(default_K(dataset.d, p), len(ranking))
    return variable_scores(ranking, int(K), dataset.d, dataset.variable_names), ranking
