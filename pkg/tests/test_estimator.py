import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from simplexcompat import SimplexEmbedder
from simplexcompat.data import make_synthetic_dataset


@pytest.fixture(scope="module")
def blobs():
    data = make_synthetic_dataset(6, 40, 10, 0.3, seed=5)
    labels = np.array(list("abcdef"))[data.y]
    return data.X, labels


def _small(**kw):
    return SimplexEmbedder(**{"hidden": (16,), "epochs": 8, "batch_size": 32, **kw})


class TestSimplexEmbedder:
    def test_params_and_clone(self):
        est = _small(lam=0.3, random_state=4)
        params = est.get_params()
        assert params["lam"] == 0.3 and params["hidden"] == (16,)
        twin = clone(est)
        assert twin.get_params() == params and not hasattr(twin, "model_")

    def test_fit_predict_transform(self, blobs):
        X, y = blobs
        mask = np.isin(y, list("abcd"))
        est = _small().fit(X[mask], y[mask])
        assert est.classifier_.k_preallocated == 16
        assert list(est.classes_) == list("abcd")
        assert est.transform(X).shape == (len(X), est.classifier_.dim)
        assert est.decision_function(X[:3]).shape == (3, 4)
        assert est.score(X[mask], y[mask]) > 0.9

    def test_deterministic(self, blobs):
        X, y = blobs
        a = _small().fit(X, y).transform(X)
        b = _small().fit(X, y).transform(X)
        np.testing.assert_array_equal(a, b)

    def test_partial_fit_adds_classes(self, blobs):
        X, y = blobs
        first = np.isin(y, list("abcd"))
        est = _small(simplex_k=8, update_learning_rate=0.01).fit(X[first], y[first])
        before = est.transform(X[first])
        est.partial_fit(X[~first], y[~first])
        assert list(est.classes_) == list("abcdef")
        assert est.n_updates_ == 1
        assert set(est.predict(X)) <= set("abcdef")
        assert not np.array_equal(before, est.transform(X[first]))

    def test_partial_fit_without_fit_fits(self, blobs):
        X, y = blobs
        est = _small().partial_fit(X, y)
        assert est.n_updates_ == 0 and len(est.classes_) == 6

    def test_capacity_exhausted(self, blobs):
        X, y = blobs
        first = np.isin(y, list("abcd"))
        est = _small(simplex_k=5).fit(X[first], y[first])
        with pytest.raises(Exception, match="free"):
            est.partial_fit(X[~first], y[~first])

    def test_errors(self, blobs):
        X, y = blobs
        with pytest.raises(NotFittedError):
            _small().transform(X)
        with pytest.raises(ValueError):
            _small().fit(X, np.zeros(len(X)))
        est = _small(epochs=1).fit(X, y)
        with pytest.raises(ValueError, match="features"):
            est.transform(X[:, :5])
