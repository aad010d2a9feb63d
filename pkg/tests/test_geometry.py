import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boxukg import autodiff as ad
from boxukg.errors import ConfigurationError, DegenerateBoxError
from boxukg.geometry import (
    EULER_GAMMA,
    GumbelBox,
    conditional_prob,
    degenerate_rows,
    expected_volume,
    intersect,
    log_expected_volume,
    mc_volume_oracle,
)


def box(lo, hi):
    return GumbelBox.from_bounds(np.asarray(lo, float), np.asarray(hi, float))


def ref_softplus(x, beta):
    # independent scalar reference: beta * log1p(exp(x / beta)) in stable form
    z = x / beta
    return beta * (z + math.log1p(math.exp(-z))) if z > 0 else beta * math.log1p(math.exp(z))


def ref_volume(lo, hi, beta):
    return math.prod(ref_softplus(h - l - 2 * EULER_GAMMA * beta, beta) for l, h in zip(lo, hi))


def test_euler_gamma():
    assert EULER_GAMMA == 0.5772156649015329


class TestGumbelBox:
    def test_bounds_round_trip(self):
        # dyadic endpoints: every intermediate is exact
        lo, hi = np.array([0.125, -2.0]), np.array([0.75, 3.5])
        b = GumbelBox.from_bounds(lo, hi)
        np.testing.assert_array_equal(b.lo, lo)
        np.testing.assert_array_equal(b.hi, hi)

    @given(arrays(float, 3, elements=st.floats(-1e3, 1e3)), arrays(float, 3, elements=st.floats(1e-3, 1e3)))
    def test_bounds_round_trip_to_rounding(self, lo, width):
        hi = lo + width
        b = GumbelBox.from_bounds(lo, hi)
        np.testing.assert_allclose(b.lo, lo, rtol=0, atol=4 * np.spacing(np.maximum(abs(lo), abs(hi))).max())
        np.testing.assert_allclose(b.hi, hi, rtol=0, atol=4 * np.spacing(np.maximum(abs(lo), abs(hi))).max())

    @given(arrays(float, 3, elements=st.floats(-1e3, 1e3)), arrays(float, 3, elements=st.floats(1e-3, 1e3)))
    def test_cen_off_round_trip(self, cen, off):
        b = GumbelBox(cen, off)
        back = GumbelBox.from_bounds(b.lo, b.hi)
        np.testing.assert_allclose(back.cen, cen, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(back.off, off, rtol=1e-12, atol=1e-12)

    def test_dim(self):
        assert box([0, 0, 0], [1, 1, 1]).dim == 3


class TestIntersect:
    def test_self_intersection_shift(self):
        beta = 0.05
        b = box([0.2, -1.0], [0.9, 1.0])
        i = intersect(b, b, beta)
        np.testing.assert_allclose(i.lo, b.lo + beta * math.log(2), atol=1e-14)
        np.testing.assert_allclose(i.hi, b.hi - beta * math.log(2), atol=1e-14)

    def test_nested_dominance(self):
        inner, outer = box([0.4, 0.4], [0.6, 0.6]), box([0.0, 0.0], [1.0, 1.0])
        i = intersect(inner, outer, 0.001)
        np.testing.assert_allclose(i.lo, inner.lo, atol=1e-9)
        np.testing.assert_allclose(i.hi, inner.hi, atol=1e-9)

    def test_overlapping_intervals(self):
        i = intersect(box([0.0], [1.0]), box([0.5], [1.5]), 0.01)
        assert abs(float(i.lo[0]) - 0.5) < 1e-6
        assert abs(float(i.hi[0]) - 1.0) < 1e-6

    def test_disjoint_result_is_legal(self):
        i = intersect(box([0.0], [1.0]), box([2.0], [3.0]), 0.01)
        assert float(i.lo[0]) > float(i.hi[0])

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            intersect(box([0.0], [1.0]), box([0.0, 0.0], [1.0, 1.0]), 0.1)

    @given(st.integers(0, 2**31))
    def test_commutative_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        a = GumbelBox(rng.normal(size=(4, 3)), rng.uniform(0.01, 1, (4, 3)))
        b = GumbelBox(rng.normal(size=(4, 3)), rng.uniform(0.01, 1, (4, 3)))
        beta = float(rng.choice([1e-4, 1e-2, 1.0]))
        ab, ba = intersect(a, b, beta), intersect(b, a, beta)
        assert np.array_equal(ab.cen, ba.cen) and np.array_equal(ab.off, ba.off)

    @given(st.integers(0, 2**31))
    def test_volume_bound(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        a = GumbelBox(rng.normal(size=(8, d)), rng.uniform(0.01, 1, (8, d)))
        b = GumbelBox(rng.normal(size=(8, d)), rng.uniform(0.01, 1, (8, d)))
        beta = float(rng.choice([1e-4, 1e-2, 1.0]))
        vi = expected_volume(intersect(a, b, beta), beta)
        assert np.all(vi <= np.minimum(expected_volume(a, beta), expected_volume(b, beta)) + 1e-12)


class TestExpectedVolume:
    def test_unit_interval_beta_one(self):
        v = float(expected_volume(box([0.0], [1.0]), 1.0))
        assert v == pytest.approx(math.log1p(math.exp(1 - 2 * EULER_GAMMA)), abs=1e-12)
        assert v == pytest.approx(0.6189096874, abs=1e-9)

    def test_saturated_low(self):
        b = box([0.0, 0.0], [1.0, -10.0])
        assert float(expected_volume(b, 0.01)) < 1e-300

    def test_saturated_high(self):
        v = float(expected_volume(box([0.0], [1.0]), 0.01))
        assert v == pytest.approx(1 - 2 * EULER_GAMMA * 0.01, abs=1e-12)
        assert v == pytest.approx(0.988456, abs=1e-6)

    @given(st.integers(0, 2**31))
    def test_matches_scalar_reference(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        lo = rng.normal(size=d)
        hi = lo + rng.uniform(0.001, 2.0, d)
        beta = float(rng.choice([1e-3, 1e-2, 0.3]))
        assert float(expected_volume(box(lo, hi), beta)) == pytest.approx(ref_volume(lo, hi, beta), rel=1e-12)

    def test_log_volume_consistent(self):
        b = box([[0.0, 0.2], [0.3, -1.0]], [[0.5, 0.9], [0.4, 2.0]])
        np.testing.assert_allclose(
            log_expected_volume(b, 0.05), np.log(expected_volume(b, 0.05)), rtol=1e-12
        )

    @given(st.integers(0, 2**31), st.floats(0.0, 1.0), st.booleans())
    def test_monotone_in_endpoints(self, seed, delta, move_hi):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        lo = rng.normal(size=d)
        hi = lo + rng.uniform(-0.5, 2.0, d)
        beta = float(rng.choice([1e-3, 1e-2, 1.0]))
        k = int(rng.integers(d))
        lo2, hi2 = lo.copy(), hi.copy()
        if move_hi:
            hi2[k] += delta
        else:
            lo2[k] -= delta
        assert float(expected_volume(box(lo2, hi2), beta)) >= float(expected_volume(box(lo, hi), beta))

    def test_gradient_matches_finite_differences(self):
        tape = ad.Tape()
        cen, off = tape.variable([0.1, 0.5]), tape.variable([0.3, 0.2])
        tape.backward(expected_volume(GumbelBox(cen, off), 0.1))
        eps = 1e-6
        for var, base in ((cen, np.array([0.1, 0.5])), (off, np.array([0.3, 0.2]))):
            for i in range(2):
                up, down = base.copy(), base.copy()
                up[i] += eps
                down[i] -= eps
                other = np.array([0.3, 0.2]) if var is cen else np.array([0.1, 0.5])
                f = (lambda x: float(expected_volume(GumbelBox(x, other), 0.1))) if var is cen else (
                    lambda x: float(expected_volume(GumbelBox(other, x), 0.1)))
                assert var.grad[i] == pytest.approx((f(up) - f(down)) / (2 * eps), rel=1e-6, abs=1e-10)


class TestConditionalProb:
    def test_self_conditioning(self):
        b = box([0.0, 0.0], [1.0, 1.0])
        p = float(conditional_prob(b, b, 0.001))
        expected = (ref_softplus(1 - 2 * 0.001 * math.log(2) - 2 * EULER_GAMMA * 0.001, 0.001)
                    / ref_softplus(1 - 2 * EULER_GAMMA * 0.001, 0.001)) ** 2
        assert p >= 0.99
        assert p == pytest.approx(expected, rel=1e-12)

    def test_disjoint(self):
        assert float(conditional_prob(box([0.0], [1.0]), box([10.0], [11.0]), 0.01)) < 1e-12

    def test_containing(self):
        p = float(conditional_prob(box([-5.0, -5.0], [5.0, 5.0]), box([0.0, 0.0], [1.0, 1.0]), 0.001))
        assert abs(p - 1.0) < 1e-6

    @pytest.mark.parametrize("beta", [1e-4, 1e-2, 1.0])
    def test_bounds_random_pairs(self, beta):
        rng = np.random.default_rng(int(beta * 1e4))
        n, d = 10_000, 3
        a = GumbelBox(rng.normal(0, 1, (n, d)), rng.uniform(0.01, 1.5, (n, d)))
        b = GumbelBox(rng.normal(0, 1, (n, d)), rng.uniform(0.01, 1.5, (n, d)))
        keep = ~degenerate_rows(b, beta)
        with np.errstate(all="ignore"):
            p = conditional_prob(a, b, beta, strict=False)[keep]
        assert np.all(p >= 0.0) and np.all(p <= 1.0 + 1e-9)

    def test_hard_box_limit(self):
        a, b = box([0.0, 0.2], [0.6, 1.0]), box([0.3, 0.0], [1.0, 0.5])
        lebesgue = (0.3 / 0.7) * (0.3 / 0.5)
        assert abs(float(conditional_prob(a, b, 1e-6)) - lebesgue) < 1e-3

    def test_degenerate_condition_raises(self):
        with pytest.raises(DegenerateBoxError):
            conditional_prob(box([0.0], [1.0]), box([0.0], [-1.0]), 0.01)

    def test_non_strict_masks_later(self):
        b = box([[0.0], [0.0]], [[1.0], [-1.0]])
        assert degenerate_rows(b, 0.01).tolist() == [False, True]


class TestMonteCarloOracle:
    def test_near_hard_box(self):
        assert abs(mc_volume_oracle(box([0.0, 0.0], [1.0, 1.0]), 1e-8, 100_000, seed=1) - 1.0) < 1e-4

    def test_matches_expected_volume(self):
        b = box([0.0], [1.0])
        mc = mc_volume_oracle(b, 0.05, 1_000_000, seed=3)
        assert abs(mc - float(expected_volume(b, 0.05))) / mc < 0.02

    def test_seed_self_consistency(self):
        b = box([0.0, 0.1], [0.4, 0.6])
        m1, s1 = mc_volume_oracle(b, 0.02, 200_000, seed=1, return_stderr=True)
        m2, s2 = mc_volume_oracle(b, 0.02, 200_000, seed=2, return_stderr=True)
        assert m1 != m2
        assert abs(m1 - m2) < 3 * math.hypot(s1, s2)

    def test_deterministic(self):
        b = box([0.0], [1.0])
        assert mc_volume_oracle(b, 0.1, 1000, seed=5) == mc_volume_oracle(b, 0.1, 1000, seed=5)

    def test_chunking_does_not_change_result(self):
        b = box([0.0], [1.0])
        assert mc_volume_oracle(b, 0.1, 1000, seed=5, chunk=1000) == pytest.approx(
            mc_volume_oracle(b, 0.1, 1000, seed=5, chunk=1000), rel=0)

    def test_needs_samples(self):
        with pytest.raises(ConfigurationError):
            mc_volume_oracle(box([0.0], [1.0]), 0.1, 0)
