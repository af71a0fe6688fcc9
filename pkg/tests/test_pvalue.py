from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sparsedetect.pvalue import (
    P_FLOOR,
    DiscreteNullSpec,
    discrete_pvalue,
    discrete_tails,
    normal_one_sided,
    normal_two_sided,
    randomized_pvalue,
    std_normal_cdf,
)

# 40-digit mpmath values of the normal distribution function
PHI_REFERENCE = {
    -1.959964: 0.024999999096442401994,
    -5.0: 2.8665157187919391167e-7,
    -10.0: 7.619853024160526066e-24,
    -20.0: 2.7536241186062336951e-89,
    -37.5: 4.6053530095819548438e-308,
    0.5: 0.69146246127401310364,
    3.0: 0.99865010196836990547,
}
POISSON_WINDOW3_S2_U03 = 0.001384494498607586169
BINOMIAL_N10_S3_U07 = 7.191549767772164797e-08


class TestNormal:
    @pytest.mark.parametrize("x,expected", sorted(PHI_REFERENCE.items()))
    def test_cdf_reference(self, x, expected):
        assert std_normal_cdf(x) == pytest.approx(expected, rel=1e-12)

    def test_quantile_example(self):
        assert std_normal_cdf(-1.959964) == pytest.approx(0.025, abs=1e-9)

    def test_no_underflow_at_minus_38(self):
        assert 0.0 < std_normal_cdf(-38.0) < 1e-315

    def test_two_sided(self):
        assert normal_two_sided(0.0) == 1.0
        assert normal_two_sided(-5.0) == pytest.approx(2 * PHI_REFERENCE[-5.0], rel=1e-12)
        assert normal_two_sided(5.0) == normal_two_sided(-5.0)

    def test_one_sided(self):
        assert normal_one_sided(0.0) == 0.5
        assert normal_one_sided(5.0) == pytest.approx(PHI_REFERENCE[-5.0], rel=1e-12)
        assert normal_one_sided(-5.0) == pytest.approx(1 - PHI_REFERENCE[-5.0], rel=1e-12)

    def test_clamped(self):
        assert normal_two_sided(60.0) == P_FLOOR
        assert normal_one_sided(60.0) == P_FLOOR
        assert normal_one_sided(-60.0) == 1.0

    @given(st.floats(-40, 40))
    def test_symmetry(self, x):
        assert std_normal_cdf(x) + std_normal_cdf(-x) == pytest.approx(1.0, abs=1e-15)

    def test_vector_shape(self):
        z = np.zeros((3, 4))
        assert normal_two_sided(z).shape == (3, 4)


class TestDiscreteNull:
    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteNullSpec.poisson(-1.0)
        with pytest.raises(ValueError):
            DiscreteNullSpec.binomial(0, 0.5)
        with pytest.raises(ValueError):
            DiscreteNullSpec.binomial(5, 1.0)

    def test_window_scaling(self):
        assert DiscreteNullSpec.poisson(0.015).for_window(3).poisson_mean == pytest.approx(0.045)
        b = DiscreteNullSpec.binomial(5, 0.001).for_window(4)
        assert (b.trials, b.success_prob) == (20, 0.001)

    @pytest.mark.parametrize("null", [DiscreteNullSpec.poisson(3.0), DiscreteNullSpec.poisson(0.015),
                                      DiscreteNullSpec.binomial(1000, 0.001)])
    def test_pmf_matches_scipy(self, null):
        x = np.arange(null.support_limit() + 1)
        if null.poisson_mean is not None:
            ref = stats.poisson.pmf(x, null.poisson_mean)
        else:
            ref = stats.binom.pmf(x, null.trials, null.success_prob)
        big = ref > 1e-250
        np.testing.assert_allclose(null.pmf_table()[big], ref[big], rtol=1e-10)

    def test_tails(self):
        null = DiscreteNullSpec.poisson(2.0)
        lo, pmf, up = discrete_tails(null)
        np.testing.assert_allclose(lo + pmf + up, 1.0, atol=1e-14)
        s = np.arange(lo.size)
        np.testing.assert_allclose(up[:20], stats.poisson.sf(s[:20], 2.0), rtol=1e-10)

    def test_tails_padding(self):
        null = DiscreteNullSpec.binomial(3, 0.2)
        lo, pmf, up = discrete_tails(null, width=6)
        assert lo[4:].tolist() == [1.0, 1.0]
        assert pmf[4:].tolist() == [0.0, 0.0]


class TestRandomizedPValue:
    def test_poisson_zero_count(self):
        p = discrete_pvalue(0, DiscreteNullSpec.poisson(0.015), 0.5)
        assert p == pytest.approx(math.exp(-0.015), abs=1e-6)
        assert p == pytest.approx(0.9851119, abs=1e-6)

    def test_binomial_zero_count(self):
        assert discrete_pvalue(0, DiscreteNullSpec.binomial(5, 0.001), 0.5) == pytest.approx(0.9950100, abs=1e-6)

    def test_reference_values(self):
        p = discrete_pvalue(2, DiscreteNullSpec.poisson(0.015).for_window(3), 0.3)
        assert p == pytest.approx(POISSON_WINDOW3_S2_U03, rel=1e-9)
        p = discrete_pvalue(3, DiscreteNullSpec.binomial(10, 0.001), 0.7)
        assert p == pytest.approx(BINOMIAL_N10_S3_U07, rel=1e-9)

    def test_invalid_inputs(self):
        null = DiscreteNullSpec.poisson(1.0)
        with pytest.raises(ValueError):
            discrete_pvalue(-1, null, 0.5)
        with pytest.raises(ValueError):
            discrete_pvalue(1.5, null, 0.5)
        with pytest.raises(ValueError):
            discrete_pvalue(1, null, 1.0)

    def test_beyond_support(self):
        assert discrete_pvalue(6, DiscreteNullSpec.binomial(5, 0.5), 0.5) == P_FLOOR

    def test_table_path_agrees(self):
        null = DiscreteNullSpec.poisson(0.6)
        lo, pmf, up = discrete_tails(null)
        for s in range(8):
            for u in (0.0, 0.25, 0.9):
                assert randomized_pvalue(lo[s], pmf[s], up[s], u) == pytest.approx(
                    discrete_pvalue(s, null, u), rel=1e-12)

    @pytest.mark.parametrize("null", [DiscreteNullSpec.poisson(0.015), DiscreteNullSpec.poisson(0.9),
                                      DiscreteNullSpec.binomial(25, 0.001)])
    def test_pit_uniform(self, null):
        rng = np.random.default_rng(7)
        m = 100_000
        if null.poisson_mean is not None:
            s = rng.poisson(null.poisson_mean, m)
        else:
            s = rng.binomial(null.trials, null.success_prob, m)
        lo, pmf, up = discrete_tails(null)
        p = randomized_pvalue(lo[s], pmf[s], up[s], rng.random(m))
        assert stats.kstest(p, "uniform").pvalue > 0.01
