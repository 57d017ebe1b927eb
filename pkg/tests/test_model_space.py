import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from causalkinetix.model_space import (
    Model,
    ModelSpaceError,
    Term,
    all_terms,
    collection_from_strings,
    count_exhaustive,
    enumerate_exhaustive,
    enumerate_main_effect,
    enumerate_metabolic,
    metabolic_terms,
    model_depends_on,
    parse_model,
    parse_term,
)


def test_d2_p1_order():
    col = enumerate_exhaustive(2, 1)
    assert [str(m) for m in col] == ["X1", "X2", "X1*X1", "X1*X2", "X2*X2"]


def test_term_count_d11():
    assert len(all_terms(11)) == 77
    assert sum(t.kind == "interaction" for t in all_terms(11)) == 66


def test_screened_33_p4_count():
    terms = all_terms(11)[:33]
    # binomial sum, computed independently of the library helper
    expected = sum(math.factorial(33) // (math.factorial(k) * math.factorial(33 - k)) for k in range(1, 5))
    assert expected == 46_937
    assert count_exhaustive(33, 4) == expected
    assert len(enumerate_exhaustive(11, 4, terms)) == expected


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_unscreened_count_bruteforce(d):
    n = d + d * (d + 1) // 2
    for p in range(1, min(n, 3) + 1):
        col = enumerate_exhaustive(d, p)
        assert len(col) == count_exhaustive(n, p)
        assert len({m for m in col}) == len(col)


def test_main_effect_closure_d2():
    col = enumerate_main_effect(2, 5)
    assert [str(m) for m in col][-1] == "X1 + X2 + X1*X1 + X1*X2 + X2*X2"
    assert len(col) == 3


@pytest.mark.parametrize("d,p", [(2, 5), (3, 5), (4, 9)])
def test_main_effect_subset_of_exhaustive(d, p):
    main = set(enumerate_main_effect(d, p))
    exh = set(enumerate_exhaustive(d, p))
    assert main <= exh
    assert len(main) <= len(exh)


def test_main_effect_p9_up_to_three_variables():
    col = enumerate_main_effect(5, 9)
    assert max(len(m.variables()) for m in col) == 3
    assert len(col) == 5 + 10 + 10


def test_metabolic_count_100():
    assert count_exhaustive(100, 3) - count_exhaustive(100, 2) == 161_700
    assert math.comb(100, 3) == 161_700


def test_metabolic_sign_pattern():
    terms = metabolic_terms(5, 0)
    col = enumerate_metabolic(5, terms[:6], 1)
    assert len(col) == 6
    for m in enumerate_metabolic(5, terms, 3).models[:500]:
        for t in m.terms:
            assert t.sign == ("nonneg" if t.aux == "Z" else "nonpos")
    with pytest.raises(ModelSpaceError):
        Model((Term((1,), "Z", "nonpos"),), "metabolic")


def test_metabolic_terms_exclude_target():
    terms = metabolic_terms(4, 2)
    assert all(2 not in t.vars for t in terms)
    # constant, 3 linear, 6 pairwise per auxiliary factor
    assert len(terms) == 2 * (1 + 3 + 6)


def test_depends_on_examples():
    m = parse_model("X1*X7")
    assert model_depends_on(m, 0) and model_depends_on(m, 6) and not model_depends_on(m, 1)
    assert not parse_model("X2 + X3").depends_on(0)
    t = parse_term("Z*X33*X138")
    assert [j for j in range(200) if t.depends_on(j)] == [32, 137]


def test_depends_on_bruteforce_d3():
    for m in enumerate_exhaustive(3, 3):
        for j in range(3):
            assert m.depends_on(j) == any(j in t.vars for t in m.terms)


def test_metabolic_string_roundtrip():
    m = parse_model("+Z*X56*X122 - Y*X33*X138", "metabolic")
    assert str(m) == "+Z*X56*X122 - Y*X33*X138"
    assert parse_model(str(m), "metabolic") == m
    with pytest.raises(ModelSpaceError):
        parse_model("X1 - X2")


def test_invalid_inputs():
    with pytest.raises(ModelSpaceError):
        Term((0, 1, 2))
    with pytest.raises(ModelSpaceError):
        parse_term("X0")
    with pytest.raises(ModelSpaceError):
        enumerate_exhaustive(2, 6)
    with pytest.raises(ModelSpaceError):
        Model((Term.linear(0), Term.linear(0)))
    with pytest.raises(ModelSpaceError):
        enumerate_main_effect(3, 1)


def test_enumeration_deterministic():
    a = [str(m) for m in enumerate_exhaustive(3, 2)]
    b = [str(m) for m in enumerate_exhaustive(3, 2)]
    assert a == b


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.booleans()), min_size=1, max_size=4, unique=True))
def test_label_roundtrip(raw):
    terms = {Term((j, k)) if inter else Term((j,)) for j, k, inter in raw}
    m = Model(tuple(terms))
    assert parse_model(str(m)) == m
    assert collection_from_strings([str(m)])[0] == m
    for a, b in itertools.combinations(m.terms, 2):
        assert a < b
