import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simplexcompat import ValidationError
from simplexcompat.hyperball import (
    HyperballSpec,
    WideCapAngleWarning,
    cap_probability,
    cap_probability_table,
    expected_nn_angle,
    mc_expected_distance,
    prototype_pair,
    sample_in_ball,
    sample_many_in_ball,
    theorem_experiment,
)

from oracles import ball_line_picking_rejection, cap_probability_mp, nn_angle_mp


class TestNearestNeighbourAngle:
    def test_n10_d3(self):
        assert expected_nn_angle(10, 3) == pytest.approx(0.25066, abs=5e-6)

    def test_n1_d3(self):
        # Gamma(1.5) * 0.125 ** -0.5
        assert expected_nn_angle(1, 3) == pytest.approx(math.gamma(1.5) / math.sqrt(0.125), rel=1e-13)
        assert expected_nn_angle(1, 3) == pytest.approx(2.5066, abs=5e-5)

    @pytest.mark.parametrize("n,d", [(1, 3), (10, 3), (100, 8), (1000, 64), (7, 512), (10**6, 1000)])
    def test_matches_high_precision_oracle(self, n, d):
        assert expected_nn_angle(n, d) == pytest.approx(float(nn_angle_mp(n, d)), rel=1e-12)

    @given(st.integers(3, 600), st.integers(1, 10**5))
    def test_strictly_decreasing_in_n(self, d, n):
        assert expected_nn_angle(n + 1, d) < expected_nn_angle(n, d)

    @pytest.mark.parametrize("n,d", [(0, 3), (10, 2), (10, 1), (2.5, 4)])
    def test_domain(self, n, d):
        with pytest.raises(ValidationError):
            expected_nn_angle(n, d)


class TestCapProbability:
    def test_spot_value(self):
        assert cap_probability(10, 3) == pytest.approx(0.12402, abs=1e-5)
        assert cap_probability(10, 3) == pytest.approx(math.sin(expected_nn_angle(10, 3)) / 2, rel=1e-13)

    @pytest.mark.parametrize("n,d", [(10, 3), (10, 8), (100, 16), (1000, 128), (100, 512), (10**4, 40)])
    def test_matches_high_precision_oracle(self, n, d):
        assert cap_probability(n, d) == pytest.approx(float(cap_probability_mp(n, d)), rel=1e-10)

    def test_no_underflow_at_high_dimension(self):
        p = cap_probability(1000, 512)
        assert 0.0 < p < 1e-30

    def test_wide_angle_warns(self):
        with pytest.warns(WideCapAngleWarning):
            cap_probability(1, 3)

    def test_decreasing_grids(self):
        dims = [8, 16, 32, 64, 128, 256, 512]
        for n in (10, 100, 1000):
            ps = [cap_probability(n, d) for d in dims]
            assert all(a > b for a, b in zip(ps, ps[1:]))
        for d in (3, 8, 64):
            ps = [cap_probability(n, d) for n in (2, 10, 100, 1000, 10**4)]
            assert all(a > b for a, b in zip(ps, ps[1:]))

    def test_tends_to_zero_with_angle(self):
        assert cap_probability(10**12, 5) < 1e-15

    def test_domain(self):
        with pytest.raises(ValidationError):
            cap_probability(10, 2)

    def test_table_order_and_columns(self):
        rows = cap_probability_table([10, 100], [3, 8])
        assert [(n, d) for n, d, _, _ in rows] == [(10, 3), (10, 8), (100, 3), (100, 8)]
        assert rows[0][2] == expected_nn_angle(10, 3)
        assert rows[0][3] == cap_probability(10, 3)


class TestSampling:
    def test_zero_radius_returns_center(self, rng):
        c = np.array([0.3, -1.0, 2.0])
        assert np.array_equal(sample_in_ball(HyperballSpec(c, 0.0), rng), c)

    def test_mean_radius_d3(self):
        rng = np.random.default_rng(1)
        x = sample_many_in_ball(HyperballSpec(np.zeros(3), 1.0), rng, 10**6)
        r = np.linalg.norm(x, axis=1)
        assert r.mean() == pytest.approx(3 / 4, abs=3 * r.std() / 1000)

    @given(st.integers(1, 50), st.floats(0.0, 10.0), st.integers(0, 2**32 - 1))
    def test_samples_stay_inside(self, d, radius, seed):
        rng = np.random.default_rng(seed)
        c = np.arange(d, dtype=np.float64)
        x = sample_many_in_ball(HyperballSpec(c, radius), rng, 200)
        # adding and removing the centre costs up to one ulp of |c| per coordinate
        slack = 4 * np.finfo(float).eps * np.linalg.norm(c)
        assert np.all(np.linalg.norm(x - c, axis=1) <= radius * (1 + 1e-12) + slack)

    def test_direction_is_isotropic(self):
        rng = np.random.default_rng(2)
        x = sample_many_in_ball(HyperballSpec(np.zeros(4), 1.0), rng, 200_000)
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.01)

    @pytest.mark.parametrize("radius", [-1.0, float("inf"), float("nan")])
    def test_bad_radius(self, radius):
        with pytest.raises(ValidationError):
            HyperballSpec(np.zeros(2), radius)


class TestExpectedDistance:
    def test_point_masses(self):
        a = HyperballSpec(np.array([1.0, 2.0]), 0.0)
        est = mc_expected_distance(a, a, samples=1000, seed=3)
        assert (est.mean, est.std_error) == (0.0, 0.0)
        b = HyperballSpec(np.array([4.0, 6.0]), 0.0)
        est = mc_expected_distance(a, b, samples=1000, seed=3)
        assert est.mean == pytest.approx(5.0, rel=1e-15)

    @pytest.mark.parametrize("d,exact", [(2, 128 / (45 * math.pi)), (3, 36 / 35)])
    def test_ball_line_picking_constants(self, d, exact):
        unit = HyperballSpec(np.zeros(d), 1.0)
        est = mc_expected_distance(unit, unit, samples=200_000, seed=11)
        assert abs(est.mean - exact) <= 3 * est.std_error

    @pytest.mark.parametrize("d", [2, 3, 5])
    def test_agrees_with_rejection_oracle(self, d):
        unit = HyperballSpec(np.zeros(d), 1.0)
        est = mc_expected_distance(unit, unit, samples=200_000, seed=5)
        ref, ref_se = ball_line_picking_rejection(d, 200_000, seed=6)
        assert abs(est.mean - ref) <= 4 * math.hypot(est.std_error, ref_se)

    def test_std_error_definition(self):
        a = HyperballSpec(np.zeros(3), 1.0)
        est = mc_expected_distance(a, a, samples=50_000, seed=8)
        # Var D = E|x|^2 + E|y|^2 - (E D)^2 = 6/5 - (36/35)^2 for unit 3-balls
        var = 6 / 5 - (36 / 35) ** 2
        assert est.std_error == pytest.approx(math.sqrt(var / 50_000), rel=0.05)
        single = mc_expected_distance(a, a, samples=1, seed=8)
        assert math.isnan(single.std_error)

    def test_deterministic_and_thread_independent(self):
        a = HyperballSpec(np.zeros(64), 1.0)
        b = HyperballSpec(np.full(64, 0.1), 0.5)
        one = mc_expected_distance(a, b, samples=150_000, seed=4, threads=1)
        four = mc_expected_distance(a, b, samples=150_000, seed=4, threads=4)
        again = mc_expected_distance(a, b, samples=150_000, seed=4, threads=1)
        assert one == four == again

    def test_seed_changes_estimate(self):
        a = HyperballSpec(np.zeros(3), 1.0)
        assert mc_expected_distance(a, a, 1000, seed=1).mean != mc_expected_distance(a, a, 1000, seed=2).mean

    @given(st.integers(1, 12), st.integers(-64, 64), st.integers(0, 1000))
    def test_translation_is_bit_exact(self, d, shift, seed):
        rng = np.random.default_rng(seed)
        ca, cb = rng.standard_normal(d), rng.standard_normal(d)
        t = np.full(d, float(shift))
        base = mc_expected_distance(HyperballSpec(ca, 1.0), HyperballSpec(cb, 0.5), 500, seed)
        moved = mc_expected_distance(HyperballSpec(ca + t, 1.0), HyperballSpec(cb + t, 0.5), 500, seed)
        # only the center difference enters the sampler
        if np.array_equal((ca + t) - (cb + t), ca - cb):
            assert base == moved

    @given(st.integers(1, 16), st.floats(0, 2), st.floats(0, 2), st.integers(0, 10**6))
    def test_bounds(self, d, ra, rb, seed):
        rng = np.random.default_rng(seed)
        ca, cb = rng.standard_normal(d), rng.standard_normal(d)
        est = mc_expected_distance(HyperballSpec(ca, ra), HyperballSpec(cb, rb), 300, seed)
        gap = float(np.linalg.norm(ca - cb))
        assert est.mean >= max(0.0, gap - ra - rb) - 1e-12
        assert est.mean <= gap + ra + rb + 1e-12

    @given(st.integers(2, 10), st.floats(0.1, 2), st.floats(0.1, 2), st.integers(0, 10**6))
    def test_symmetric_in_distribution(self, d, ra, rb, seed):
        rng = np.random.default_rng(seed)
        a = HyperballSpec(rng.standard_normal(d), ra)
        b = HyperballSpec(rng.standard_normal(d), rb)
        ab = mc_expected_distance(a, b, 4000, seed)
        ba = mc_expected_distance(b, a, 4000, seed + 1)
        # 4.5 sigma keeps the family-wise false alarm rate negligible over the examples
        assert abs(ab.mean - ba.mean) <= 4.5 * math.hypot(ab.std_error, ba.std_error)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            mc_expected_distance(HyperballSpec(np.zeros(2), 1), HyperballSpec(np.zeros(3), 1), 10)

    @pytest.mark.parametrize("samples", [0, -5, 2.5])
    def test_bad_sample_count(self, samples):
        a = HyperballSpec(np.zeros(2), 1)
        with pytest.raises(ValidationError):
            mc_expected_distance(a, a, samples)


class TestTheoremExperiment:
    @pytest.mark.parametrize("k", [2, 3, 9, 40])
    def test_prototype_pair_geometry(self, k):
        for d in (k - 1, 50):
            a, b = prototype_pair(d, k)
            assert a.shape == (d,)
            assert np.linalg.norm(a) == pytest.approx(1.0) and np.linalg.norm(b) == pytest.approx(1.0)
            assert a @ b == pytest.approx(-1 / (k - 1), abs=1e-12)

    def test_prototype_pair_default_uses_native_simplex(self):
        a, b = prototype_pair(5)
        assert a @ b == pytest.approx(-1 / 5, abs=1e-12)

    def test_same_class_small(self):
        rows = theorem_experiment("same_class", [2, 16], samples=20_000, seed=1)
        assert [r.key for r in rows] == [2, 16]
        for r in rows:
            assert r.mean_kt < r.mean_kk and r.margin > 3

    def test_different_class_small(self):
        for r in theorem_experiment("different_class", [3, 32], samples=20_000, seed=2):
            assert r.mean_kt < r.mean_kk

    def test_shift_monotone(self):
        rows = theorem_experiment("shift", [64], samples=20_000, seed=3)
        assert [r.key for r in rows] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        for lo, hi in zip(rows, rows[1:]):
            assert hi.mean_kt >= lo.mean_kt - 3 * math.hypot(lo.stderr_kt, hi.stderr_kt)
        assert rows[-1].mean_kt > rows[0].mean_kt

    def test_rejects_growing_ball(self):
        with pytest.raises(ValidationError, match="shrink"):
            theorem_experiment("same_class", [4], r_old=0.5, r_new=1.0, samples=10)

    def test_shift_needs_one_dimension(self):
        with pytest.raises(ValidationError):
            theorem_experiment("shift", [4, 8], samples=10)

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            theorem_experiment("sideways", [4], samples=10)

    def test_reproducible(self):
        a = theorem_experiment("different_class", [8], samples=5000, seed=9)
        b = theorem_experiment("different_class", [8], samples=5000, seed=9, threads=3)
        assert a == b
