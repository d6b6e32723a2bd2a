import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from irformer import IRFormerTranslator
from irformer.data import make_synthetic_pairs
from irformer.exceptions import ConfigError, DimensionError


@pytest.fixture(scope="module")
def xy():
    pairs = make_synthetic_pairs(2, 16, seed=0)
    return np.stack([p.vis.data for p in pairs]), np.stack([p.ir.data for p in pairs])


def small(**kw):
    return IRFormerTranslator(**{"efm_scales": (2, 4), "epochs": 2, **kw})


def test_get_params_and_clone():
    est = small(lr=1e-3, use_dfa=False)
    params = est.get_params()
    assert params["lr"] == 1e-3 and params["use_dfa"] is False and params["efm_scales"] == (2, 4)
    c = clone(est)
    assert c.get_params() == params
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        small().predict(np.zeros((1, 3, 16, 16)))


def test_fit_predict_score(xy):
    X, y = xy
    est = small().fit(X, y)
    assert est.n_steps_ == 4
    assert len(est.history_) == 4
    pred = est.predict(X)
    assert pred.shape == (2, 1, 16, 16)
    assert np.all((pred > 0) & (pred < 1))
    assert np.isfinite(est.score(X, y))
    assert -1 <= est.ssim_score(X, y) <= 1


def test_fit_is_deterministic(xy):
    X, y = xy
    a, b = small().fit(X, y), small().fit(X, y)
    assert a.history_ == b.history_
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_squeezed_targets_and_single_image(xy):
    X, y = xy
    est = small(epochs=1).fit(X, y[:, 0])
    assert est.predict(X[0]).shape == (1, 1, 16, 16)


@pytest.mark.parametrize("bad", ["range", "nan", "channels", "count"])
def test_input_validation(xy, bad):
    X, y = xy[0].copy(), xy[1].copy()
    if bad == "range":
        X[0, 0, 0, 0] = 1.5
        err = ValueError
    elif bad == "nan":
        y[0, 0, 0, 0] = np.nan
        err = ValueError
    elif bad == "channels":
        X = X[:, :2]
        err = DimensionError
    else:
        y = y[:1]
        err = DimensionError
    with pytest.raises(err):
        small().fit(X, y)


def test_indivisible_resolution(xy):
    X, y = xy
    with pytest.raises(ConfigError):
        IRFormerTranslator(efm_scales=(2, 4, 8, 32), epochs=1).fit(X, y)


def test_from_params(xy):
    X, y = xy
    est = small().fit(X, y)
    wrapped = IRFormerTranslator.from_params(est.params_, est.config_)
    np.testing.assert_array_equal(wrapped.predict(X), est.predict(X))
