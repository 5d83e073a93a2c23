import numpy as np
import pytest

from simplexcompat import ValidationError
from simplexcompat.losses import hoc_loss, nce_loss, sce_loss
from simplexcompat.network import LinearHead, RepresentationModel
from simplexcompat.simplex import PRETRAIN, build_simplex
from simplexcompat.training import HOCConfig

from oracles import central_difference, rel_error


@pytest.fixture
def small_model():
    return RepresentationModel.init([6, 9, 7, 5], seed=3, model_id="m")


class TestForward:
    def test_shapes_and_properties(self, small_model):
        assert small_model.layer_sizes == [6, 9, 7, 5]
        assert (small_model.input_dim, small_model.embedding_dim) == (6, 5)
        assert len(small_model.params) == 6
        assert small_model.forward(np.zeros((4, 6))).shape == (4, 5)

    def test_deterministic(self, small_model, rng):
        x = rng.standard_normal((10, 6))
        assert np.array_equal(small_model(x), small_model(x))

    def test_matches_explicit_layers(self, small_model, rng):
        x = rng.standard_normal((3, 6))
        h = x
        for i, (w, b) in enumerate(zip(small_model.weights, small_model.biases)):
            h = h @ w + b
            if i < 2:
                h = np.where(h > 0, h, 0.0)
        np.testing.assert_allclose(small_model(x), h, rtol=0, atol=1e-14)

    def test_embed_batches_consistently(self, small_model, rng):
        x = rng.standard_normal((25, 6))
        np.testing.assert_array_equal(small_model.embed(x, batch_size=7), small_model.forward(x))

    def test_input_width_checked(self, small_model):
        with pytest.raises(ValidationError):
            small_model.forward(np.zeros((2, 5)))

    def test_init_seeded(self):
        a = RepresentationModel.init([4, 8, 3], seed=1)
        b = RepresentationModel.init([4, 8, 3], seed=1)
        c = RepresentationModel.init([4, 8, 3], seed=2)
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_invalid_construction(self):
        with pytest.raises(ValidationError):
            RepresentationModel([np.zeros((3, 4))], [np.zeros(5)])
        with pytest.raises(ValidationError):
            RepresentationModel([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])
        with pytest.raises(ValidationError):
            RepresentationModel([np.zeros((3, 4))], [np.zeros(4)], provenance="borrowed")


class TestBackward:
    def _check(self, model, loss_of_features, x):
        feats, cache = model.forward(x, return_cache=True)
        _, g = loss_of_features(feats)
        grads = model.backward(g, cache)
        for p, gp in zip(model.params, grads):
            def f(val, p=p):
                saved = p.copy()
                p[...] = val
                out = loss_of_features(model.forward(x))[0]
                p[...] = saved
                return out

            assert rel_error(gp, central_difference(f, p.copy())) < 1e-5

    def test_parameter_gradients_sce(self, rng):
        cls = build_simplex(6)
        cls.assign_classes(range(6), PRETRAIN)
        for seed in range(4):
            model = RepresentationModel.init([4, 8, 5], seed=seed)
            x = rng.standard_normal((6, 4))
            y = rng.integers(0, 6, 6)
            self._check(model, lambda f: sce_loss(f, y, cls), x)

    def test_parameter_gradients_nce_and_hoc(self, rng):
        cls = build_simplex(6)
        cls.assign_classes(range(6), PRETRAIN)
        for seed in range(3):
            model = RepresentationModel.init([4, 7, 6, 5], seed=seed)
            x = rng.standard_normal((5, 4))
            old = rng.standard_normal((5, 5))
            y = rng.integers(0, 6, 5)
            self._check(model, lambda f: nce_loss(f, old, 4.0), x)
            self._check(model, lambda f: hoc_loss(f, y, old, cls, HOCConfig(lam=0.4, tau=4.0)), x)


class TestCheckpoint:
    def test_round_trip_exact(self, small_model, tmp_path):
        small_model.provenance = "finetuned"
        path = tmp_path / "ck.json"
        small_model.save(path)
        back = RepresentationModel.load(path)
        assert back.model_id == "m" and back.provenance == "finetuned"
        assert all(np.array_equal(p, q) for p, q in zip(back.params, small_model.params))

    def test_layer_size_mismatch_rejected(self, small_model):
        doc = small_model.to_dict()
        doc["layer_sizes"] = [6, 9, 7, 4]
        with pytest.raises(ValidationError):
            RepresentationModel.from_dict(doc)

    def test_copy_is_deep(self, small_model):
        c = small_model.copy(model_id="c", provenance="replaced")
        c.weights[0][0, 0] += 1.0
        assert c.weights[0][0, 0] != small_model.weights[0][0, 0]
        assert (c.model_id, c.provenance) == ("c", "replaced")


class TestLinearHead:
    def test_index_lookup(self):
        head = LinearHead.init(4, [7, 3, 9])
        np.testing.assert_array_equal(head.index_of([9, 7]), [2, 0])
        with pytest.raises(ValidationError):
            head.index_of([5])
