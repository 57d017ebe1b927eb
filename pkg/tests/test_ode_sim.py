import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalkinetix.kinetic_data import write_dataset
from causalkinetix.ode_sim import (
    MAILLARD_SPECIES,
    NoiseSpec,
    add_noise,
    hidden_system,
    integrate,
    maillard_system,
    noise_sd,
    quadratic_grid,
    sample_dataset1,
    sample_dataset2,
    sample_dataset3,
    solve_ivp_dopri,
    total_variation,
)


def test_exponential_decay():
    out = solve_ivp_dopri(lambda t, x: -x, 0.0, [1.0], [1.0])
    assert abs(out[0, 0] - np.exp(-1)) < 1e-6


def test_error_scales_with_tolerance():
    errs = []
    for rtol in (1e-4, 1e-6, 1e-8):
        out = solve_ivp_dopri(lambda t, x: -x, 0.0, [1.0], [1.0], rtol=rtol, atol=rtol * 1e-3)
        err = abs(out[0, 0] - np.exp(-1))
        assert err <= 10 * rtol
        errs.append(err)
    assert errs[0] > errs[1] > errs[2]


def test_constant_rhs():
    out = solve_ivp_dopri(lambda t, x: np.zeros(2), 0.0, [1.5, -2.0], np.linspace(0, 5, 7))
    assert np.all(out == np.array([[1.5], [-2.0]]))


def test_formic_acid_equals_c5():
    sys = maillard_system()
    x = integrate(sys, (0, 100), quadratic_grid(41))
    fa, c5 = MAILLARD_SPECIES.index("Formic acid"), MAILLARD_SPECIES.index("C5")
    np.testing.assert_allclose(x[fa], x[c5], atol=1e-8)
    assert np.all(x >= -1e-9)


def test_parameter_tables():
    m = maillard_system().params
    assert m["k7"] == 0.00018 and m["k11"] == 0.12514
    h = hidden_system().params
    assert h["k4"] == 0.1 and h["k7"] == 0.1


def test_melanoidin_monotone_and_truth():
    sim = sample_dataset1(3, target=10, c=0, L=21)
    for x in sim.trajectories:
        assert np.all(np.diff(x[10]) >= -1e-9)
    assert sim.truth == [MAILLARD_SPECIES.index("AMP")]


def test_quadratic_grid():
    np.testing.assert_allclose(quadratic_grid(11), [0, 1, 4, 9, 16, 25, 36, 49, 64, 81, 100])


def test_zero_noise_equals_trajectories():
    sim = sample_dataset1(4, c=0)
    for exp, x in zip(sim.dataset.experiments, sim.trajectories):
        for rep in exp.repetitions:
            np.testing.assert_array_equal(rep.values, x)


def test_dataset2_truth_and_shape():
    sim = sample_dataset2(5)
    assert sim.truth == [0, 1]
    assert sim.dataset.d == 13 and sim.dataset.target == "Y"
    coefs = np.array(sim.info["sigmoid_coefficients"])
    assert coefs.shape == (5, 12, 4)


def test_hidden_x2_equals_h2_when_rates_match():
    sys = hidden_system()
    sys = sys.with_params(k7=sys.params["k4"])
    x = integrate(sys, (0, 100), np.linspace(0, 100, 30))
    np.testing.assert_allclose(x[1], x[7], atol=1e-8)


def test_hidden_dataset_columns():
    sim = sample_dataset3(6, L=10, m=4)
    assert sim.dataset.d == 7
    assert "H1" not in sim.dataset.variable_names
    full = sample_dataset3(6, L=10, m=4, hide=False)
    assert full.dataset.d == 9


def test_total_variation_examples():
    assert total_variation([1, 2, 5, 9]) == 8
    assert total_variation([0, 1, 0, 1]) == 3
    assert noise_sd(np.full(5, 3.0), 0.5) == 1e-7


def test_ar_zero_equals_iid():
    traj = np.vstack([np.linspace(0, 1, 9), np.linspace(2, 0, 9)])
    a = add_noise(traj, NoiseSpec("iid", 0.1), 42, (1, 2))
    b = add_noise(traj, NoiseSpec("ar1", 0.1, a=0.0), 42, (1, 2))
    np.testing.assert_array_equal(a, b)


def test_ar_marginal_sd():
    traj = np.zeros((1, 20000))
    traj[0, -1] = 1.0  # total variation 1
    e = add_noise(traj, NoiseSpec("ar1", 1.0, a=0.8), 0)[0, :-1]
    assert np.std(e) == pytest.approx(1.0, rel=0.1)
    assert np.corrcoef(e[1:], e[:-1])[0, 1] == pytest.approx(0.8, abs=0.05)


def test_invalid_noise():
    with pytest.raises(ValueError):
        NoiseSpec("ar1", 0.1, a=1.0)
    with pytest.raises(ValueError):
        NoiseSpec("pink")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_seed_determinism(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("det")
    write_dataset(sample_dataset1(seed).dataset, path / "a.json")
    write_dataset(sample_dataset1(seed).dataset, path / "b.json")
    assert (path / "a.json").read_bytes() == (path / "b.json").read_bytes()


def test_different_seeds_differ():
    a = sample_dataset1(1, target=0).dataset.experiments[0].repetitions[0].values
    b = sample_dataset1(2, target=0).dataset.experiments[0].repetitions[0].values
    assert not np.array_equal(a, b)
