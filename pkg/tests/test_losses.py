import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simplexcompat import HOCConfig, ValidationError
from simplexcompat.losses import cross_entropy_head, hoc_loss, hoc_terms, nce_loss, sce_loss
from simplexcompat.simplex import FINETUNE, PRETRAIN, build_simplex

from oracles import central_difference, nce_reference, rel_error, sce_reference


def _assigned(k, n_pre=None):
    cls = build_simplex(k)
    n_pre = k // 2 if n_pre is None else n_pre
    cls.assign_classes(range(n_pre), PRETRAIN)
    cls.assign_classes(range(100, 100 + k - n_pre), FINETUNE)
    return cls


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


class TestSCE:
    def test_two_prototype_hand_value(self):
        cls = _assigned(2, 1)
        loss, _ = sce_loss(np.array([[1.0]]), [0], cls)
        # -log sigmoid(sqrt 2)
        assert loss == pytest.approx(math.log1p(math.exp(-math.sqrt(2))), rel=1e-14)
        assert loss == pytest.approx(0.2176217, abs=1e-7)

    @pytest.mark.parametrize("k", [2, 5, 16])
    def test_zero_features_give_log_k(self, k):
        cls = _assigned(k)
        loss, _ = sce_loss(np.zeros((3, k - 1)), [0, 1, 0], cls)
        assert loss == pytest.approx(math.log(k), rel=1e-14)

    def test_matches_reference(self, rng):
        cls = _assigned(8)
        f = rng.standard_normal((6, 7)) * 2
        y = rng.integers(0, 8, 6)
        assert sce_loss(f, y, cls)[0] == pytest.approx(sce_reference(f, y, cls.prototypes), rel=1e-12)

    def test_gradient_finite_differences(self, rng):
        cls = _assigned(8)
        for _ in range(20):
            f = rng.standard_normal((5, 7))
            y = rng.integers(0, 8, 5)
            _, g = sce_loss(f, y, cls)
            num = central_difference(lambda x: sce_loss(x, y, cls)[0], f)
            assert rel_error(g, num) < 1e-5

    def test_sum_reduction(self, rng):
        cls = _assigned(4)
        f = rng.standard_normal((3, 3))
        mean, gm = sce_loss(f, [0, 1, 2], cls)
        total, gs = sce_loss(f, [0, 1, 2], cls, reduction="sum")
        assert total == pytest.approx(3 * mean)
        np.testing.assert_allclose(gs, 3 * gm)

    def test_unassigned_index_rejected(self):
        cls = build_simplex(5)
        cls.assign_classes(["a"], PRETRAIN)
        with pytest.raises(ValidationError, match="not assigned"):
            sce_loss(np.zeros((1, 4)), [3], cls)

    def test_raw_array_accepted(self):
        w = build_simplex(3).prototypes
        loss, _ = sce_loss(np.zeros((1, 2)), [2], w)
        assert loss == pytest.approx(math.log(3))

    def test_shape_checks(self):
        cls = _assigned(4)
        with pytest.raises(ValidationError):
            sce_loss(np.zeros((2, 5)), [0, 1], cls)
        with pytest.raises(ValidationError):
            sce_loss(np.zeros((2, 3)), [0], cls)
        with pytest.raises(ValidationError):
            sce_loss(np.zeros((1, 3)), [0], cls, reduction="median")


class TestNCE:
    def test_orthonormal_pair(self):
        e = np.eye(2)
        loss, _ = nce_loss(e, e, tau=10)
        assert loss == pytest.approx(-20.0, abs=1e-12)

    @pytest.mark.parametrize("include_positive", [False, True])
    def test_matches_reference(self, rng, include_positive):
        new, old = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
        got, _ = nce_loss(new, old, 3.0, include_positive)
        assert got == pytest.approx(nce_reference(new, old, 3.0, include_positive), rel=1e-11)

    def test_gradient_finite_differences(self, rng):
        for i in range(20):
            new, old = rng.standard_normal((8, 15)), rng.standard_normal((8, 15))
            inc = bool(i % 2)
            _, g = nce_loss(new, old, 10.0, inc)
            num = central_difference(lambda x: nce_loss(x, old, 10.0, inc)[0], new)
            assert rel_error(g, num) < 1e-5

    @given(
        arrays(np.float64, (5, 4), elements=finite),
        arrays(np.float64, (5, 4), elements=finite),
        arrays(np.float64, (5,), elements=st.floats(0.01, 100)),
        arrays(np.float64, (5,), elements=st.floats(0.01, 100)),
    )
    def test_invariant_to_per_vector_rescaling(self, new, old, s_new, s_old):
        if np.any(np.linalg.norm(new, axis=1) < 1e-3) or np.any(np.linalg.norm(old, axis=1) < 1e-3):
            return
        base, _ = nce_loss(new, old, 10.0)
        scaled, _ = nce_loss(new * s_new[:, None], old * s_old[:, None], 10.0)
        assert abs(base - scaled) < 1e-9 * max(1.0, abs(base))

    def test_old_features_get_no_gradient_path(self, rng):
        new, old = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        _, g = nce_loss(new, old)
        assert g.shape == new.shape

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValidationError, match="at least 2"):
            nce_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_zero_vector_rejected(self):
        new = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValidationError, match="zero-norm"):
            nce_loss(new, np.eye(2))

    def test_bad_tau_and_shapes(self):
        with pytest.raises(ValidationError):
            nce_loss(np.eye(2), np.eye(2), tau=0)
        with pytest.raises(ValidationError):
            nce_loss(np.eye(2), np.eye(3)[:2])


class TestHOC:
    def _batch(self, rng, b=6):
        cls = _assigned(8)
        return cls, rng.standard_normal((b, 7)), rng.integers(0, 8, b), rng.standard_normal((b, 7))

    def test_lambda_one_is_sce_bit_for_bit(self, rng):
        cls, f, y, old = self._batch(rng)
        loss, g = hoc_loss(f, y, old, cls, HOCConfig(lam=1.0))
        ref, gref = sce_loss(f, y, cls)
        assert loss == ref and np.array_equal(g, gref)

    def test_lambda_zero_is_mean_nce(self, rng):
        cls, f, y, old = self._batch(rng)
        loss, g = hoc_loss(f, y, old, cls, HOCConfig(lam=0.0, tau=10))
        ref, gref = nce_loss(f, old, 10, reduction="mean")
        assert loss == ref and np.array_equal(g, gref)

    def test_convex_combination(self, rng):
        cls, f, y, old = self._batch(rng)
        loss, _ = hoc_loss(f, y, old, cls, HOCConfig(lam=0.1))
        ls, _ = sce_loss(f, y, cls)
        ln, _ = nce_loss(f, old, 10, reduction="mean")
        assert abs(loss - (0.1 * ls + 0.9 * ln)) <= 1e-12

    def test_linear_in_lambda(self, rng):
        cls, f, y, old = self._batch(rng)
        lams = [0.0, 0.25, 0.5, 1.0]
        out = [hoc_loss(f, y, old, cls, HOCConfig(lam=lam)) for lam in lams]
        (l0, g0), (l1, g1) = out[0], out[-1]
        for lam, (loss, g) in zip(lams, out):
            assert loss == pytest.approx((1 - lam) * l0 + lam * l1, abs=1e-12)
            np.testing.assert_allclose(g, (1 - lam) * g0 + lam * g1, atol=1e-12)

    def test_gradient_finite_differences(self, rng):
        for _ in range(20):
            cls, f, y, old = self._batch(rng, b=5)
            cfg = HOCConfig(lam=float(rng.uniform()), tau=float(rng.uniform(1, 12)))
            _, g = hoc_loss(f, y, old, cls, cfg)
            num = central_difference(lambda x: hoc_loss(x, y, old, cls, cfg)[0], f)
            assert rel_error(g, num) < 1e-5

    def test_needs_old_features_below_one(self, rng):
        cls, f, y, _ = self._batch(rng)
        with pytest.raises(ValidationError, match="previous model"):
            hoc_loss(f, y, None, cls, HOCConfig(lam=0.5))

    def test_terms_report_components(self, rng):
        cls, f, y, old = self._batch(rng)
        total, ls, ln, _ = hoc_terms(f, y, old, cls, 0.3, 10.0)
        assert total == pytest.approx(0.3 * ls + 0.7 * ln)
        total, ls, ln, _ = hoc_terms(f, y, None, cls, 1.0, 10.0)
        assert total == ls and math.isnan(ln)


class TestCrossEntropyHead:
    def test_gradients(self, rng):
        for _ in range(5):
            f = rng.standard_normal((6, 4))
            w = rng.standard_normal((3, 4))
            b = rng.standard_normal(3)
            y = rng.integers(0, 3, 6)
            _, gf, gw, gb = cross_entropy_head(f, y, w, b)
            assert rel_error(gf, central_difference(lambda x: cross_entropy_head(x, y, w, b)[0], f)) < 1e-5
            assert rel_error(gw, central_difference(lambda x: cross_entropy_head(f, y, x, b)[0], w)) < 1e-5
            assert rel_error(gb, central_difference(lambda x: cross_entropy_head(f, y, w, x)[0], b)) < 1e-5
