import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from causalkinetix.estimators import (
    CausalKinetiX,
    SmoothingSpline,
    TermScreener,
    check_positive_int,
    check_time_series,
)
from causalkinetix.ode_sim import sample_dataset2
from causalkinetix.spline import fit_smoother


def test_params_and_clone():
    est = CausalKinetiX(model_class="main_effect", p=5, K=3)
    params = est.get_params()
    assert params["model_class"] == "main_effect" and params["p"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    assert clone(SmoothingSpline(lam=0.1)).get_params()["lam"] == 0.1
    assert clone(TermScreener(keep=5)).get_params()["keep"] == 5


def test_smoothing_spline_matches_function():
    t = np.linspace(0, 3, 12)
    y = np.sin(t)
    est = SmoothingSpline(lam=0.01).fit(t, y)
    np.testing.assert_allclose(est.predict(t), fit_smoother(t, y, 0.01)(t), atol=1e-12)
    assert est.derivative(t).shape == t.shape
    assert est.score(t, y) > 0.99


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SmoothingSpline().predict([0.0])
    with pytest.raises(NotFittedError):
        CausalKinetiX().predict()


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_time_series([0, 1, 1, 2], [1, 2, 3, 4])
    with pytest.raises(ValueError):
        check_time_series([0, 1], [1, 2])
    with pytest.raises(ValueError):
        check_positive_int(0, "p")
    with pytest.raises(ValueError):
        check_positive_int(True, "p")
    assert check_positive_int(None, "keep", allow_none=True) is None


def test_pipeline_on_sigmoid_data():
    ds = sample_dataset2(1, L=10).dataset
    screener = TermScreener(keep=6).fit(ds)
    assert len(screener.selected_terms_) == 6
    assert screener.transform(ds).shape[1] == 6
    est = CausalKinetiX(model_class="main_effect", p=2, workers=1).fit(ds)
    assert est.transform().shape == (1, ds.d)
    assert sorted(est.predict().tolist()) == list(range(ds.d))
    assert np.all((est.scores_ >= 0) & (est.scores_ <= 1))
    assert len(est.best_model_) >= 1
