import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalkinetix.evaluation import (
    auroc,
    false_discoveries,
    loglog_slope,
    maillard_true_terms,
    rank_accuracy,
    roc_points,
    run_arnoise_study,
    run_consistency_study,
    run_maillard_study,
    run_overfitting_study,
    run_scalability_probe,
    worst_true_rank,
)
from causalkinetix.model_space import parse_term


def _pairwise(scores, truth):
    """Share of (parent, non-parent) pairs won by the parent; ties count half."""
    par = [scores[j] for j in truth]
    non = [scores[j] for j in range(len(scores)) if j not in truth]
    wins = sum((p > q) + 0.5 * (p == q) for p in par for q in non)
    return wins / (len(par) * len(non))


def _trapezoid(points):
    x, y = np.array(points).T
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def test_auroc_trivial():
    assert auroc([0, 1, 2, 3], [0, 1], d=4).auroc == 1.0
    assert auroc([3, 2, 1, 0], [0, 1], d=4).auroc == 0.0
    assert auroc(np.array([0.9, 0.8, 0.1, 0.0]), [0, 1]).false_discoveries_before_full_recovery == 0


def test_auroc_invalid_truth():
    with pytest.raises(ValueError):
        auroc(np.ones(3), [])
    with pytest.raises(ValueError):
        auroc(np.ones(3), [0, 1, 2])


def test_auroc_bruteforce_d6():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.normal(size=6)
        assert auroc(s, [1, 4]).auroc == pytest.approx(_pairwise(s, [1, 4]), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.data())
def test_auroc_pairwise_and_trapezoid(d, data):
    scores = np.array(data.draw(st.lists(st.integers(0, 4), min_size=d, max_size=d)), dtype=float)
    k = data.draw(st.integers(1, d - 1))
    truth = data.draw(st.lists(st.integers(0, d - 1), min_size=k, max_size=k, unique=True))
    m = auroc(scores, truth)
    assert m.auroc == pytest.approx(_pairwise(scores, truth), abs=1e-12)
    assert m.auroc == pytest.approx(_trapezoid(m.roc_points), abs=1e-12)
    assert m.roc_points[-1] == (1.0, 1.0)


def test_false_discoveries_and_roc():
    mask = np.array([True, False, True, False, False])
    s = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    assert false_discoveries(s, mask) == 1
    assert roc_points(s, mask)[:3] == [(0.0, 0.0), (0.0, 0.5), (1 / 3, 0.5)]


def test_rank_accuracy_examples():
    assert rank_accuracy([0.2, 0.1, 0.3], [True, False, False]) == 0.5
    assert rank_accuracy([0.1, 0.2, 0.3], [True, False, False]) == 1.0
    assert rank_accuracy([0.1, 0.2], [False, False]) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=12))
def test_rank_accuracy_range(pairs):
    s, f = map(list, zip(*pairs))
    ra = rank_accuracy(s, f)
    assert 0 <= ra <= 1
    if any(f) and not all(f):
        worst = max(x for x, g in zip(s, f) if g)
        assert (ra == 1.0) == (not any(x < worst for x, g in zip(s, f) if not g))


def test_worst_true_rank():
    order = [parse_term(x) for x in ("X1", "X2", "X3", "X4")]
    assert worst_true_rank(order, [order[0], order[2]]) == (3, True)
    assert worst_true_rank(order, [parse_term("X5")]) == (5, False)


def test_random_worst_rank_order_statistic():
    n, k = 77, 3
    # exact median of the maximum of k positions drawn without replacement
    cdf = [math.comb(r, k) / math.comb(n, k) for r in range(n + 1)]
    exact = next(r for r in range(n + 1) if cdf[r] >= 0.5)
    rng = np.random.default_rng(1)
    terms = list(range(n))
    ranks = [worst_true_rank(list(rng.permutation(terms)), [0, 1, 2])[0] for _ in range(100_000)]
    assert abs(np.median(ranks) - exact) <= 1


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, r2 = loglog_slope(x, 3 * x**2.5)
    assert slope == pytest.approx(2.5) and r2 == pytest.approx(1.0)


def test_maillard_true_terms_melanoidin():
    assert [str(t) for t in maillard_true_terms(10)] == ["X8"]
    assert "X7*X10" not in [str(t) for t in maillard_true_terms(10)]
    assert {str(t) for t in maillard_true_terms(0)} == {"X1", "X2", "X1*X10"}


def test_random_baseline_near_half():
    s = run_maillard_study(B=100, methods=("random",), seed=11)
    assert abs(s.aggregates["mean_auroc_random"] - 0.5) <= 0.1


def test_single_L_consistency_summary(tmp_path):
    s = run_consistency_study(L_values=(11,), B=2, m=4, seed=12)
    rows = s.tables["rankaccuracy_by_L.csv"]
    assert len(rows) == 1
    files = s.write(tmp_path)
    assert "summary.json" in [f.name if hasattr(f, "name") else str(f).split("/")[-1] for f in files]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["study"] == "consistency"


def test_study_seed_determinism():
    a = run_maillard_study(B=3, methods=("random",), seed=3, workers=1)
    b = run_maillard_study(B=3, methods=("random",), seed=3, workers=2)
    assert a.runs == b.runs
    assert a.aggregates == b.aggregates


def test_overfitting_and_arnoise_smoke():
    over = run_overfitting_study(p_values=(1, 2), B=1, keep=8)
    assert [r["p"] for r in over.aggregates["by_p"]] == [1, 2]
    ar = run_arnoise_study(a_values=(0.0, 0.5), B=1, keep=8, p=2)
    assert [r["a"] for r in ar.aggregates["by_ar"]] == [0.0, 0.5]
    assert all(0 <= r["median_auroc"] <= 1 for r in ar.aggregates["by_ar"])


def test_scalability_probe_smoke():
    s = run_scalability_probe("R", values=[1, 2, 3], repeats=1)
    assert len(s.tables["runtime_loglog.csv"]) == 3
    assert np.isfinite(s.aggregates["slope"])
    with pytest.raises(ValueError):
        run_scalability_probe("R", values=[1, 2])
