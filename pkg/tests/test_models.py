from __future__ import annotations

import math

import numpy as np
import pytest

from sparsedetect.models import (
    BernoulliSubset,
    BinomialShift,
    ChangeScenario,
    FixedSubset,
    NormalShift,
    PoissonShift,
    SeededSource,
    affected_mask,
    draw_subset,
    generate_block,
    generate_step,
    trial_stream,
)

FAMILIES = [NormalShift(1.0), PoissonShift(), BinomialShift()]


class TestScenario:
    def test_null_and_immediate(self):
        assert ChangeScenario.null().change_time == math.inf
        sc = ChangeScenario.immediate(5)
        assert sc.change_time == 1 and sc.subset_size == 5
        assert sc.subset.indices == (0, 1, 2, 3, 4)

    @pytest.mark.parametrize("nu", [0, 1.5, -3])
    def test_bad_change_time(self, nu):
        with pytest.raises(ValueError):
            ChangeScenario(nu, FixedSubset((0,)))

    def test_change_needs_subset(self):
        with pytest.raises(ValueError):
            ChangeScenario(3, None)

    def test_fixed_subset_validation(self):
        with pytest.raises(ValueError):
            FixedSubset(())
        with pytest.raises(ValueError):
            FixedSubset((1, 1))
        with pytest.raises(ValueError):
            FixedSubset((-1,))
        with pytest.raises(ValueError):
            ChangeScenario.immediate(5).validate_for(4)

    def test_bernoulli_validation(self):
        for eps in (0.0, 1.0, 1.2):
            with pytest.raises(ValueError):
                BernoulliSubset(eps)

    def test_family_validation(self):
        with pytest.raises(ValueError):
            PoissonShift(-0.1, 0.3)
        with pytest.raises(ValueError):
            BinomialShift(0, 0.1, 0.2)


class TestSeeding:
    def test_reproducible(self):
        a = SeededSource(11, 4).observation_rng().random(5)
        b = SeededSource(11, 4).observation_rng().random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        base = SeededSource(11, 4).observation_rng().random(5)
        assert not np.array_equal(base, SeededSource(11, 5).observation_rng().random(5))
        assert not np.array_equal(base, SeededSource(12, 4).observation_rng().random(5))
        u = np.random.Generator(SeededSource(11, 4).uniform_bitgen()).random(5)
        assert not np.array_equal(base, u)

    @pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.name)
    def test_chunk_invariance(self, family):
        sc = ChangeScenario(4, FixedSubset((0, 2)), family)
        mask = affected_mask(sc, 5, SeededSource(3, 0))
        whole = generate_block(sc, SeededSource(3, 0).observation_rng(), mask, 1, 12)
        rng = SeededSource(3, 0).observation_rng()
        parts = [generate_block(sc, rng, mask, 1, 3), generate_block(sc, rng, mask, 4, 1),
                 generate_block(sc, rng, mask, 5, 8)]
        np.testing.assert_array_equal(whole, np.concatenate(parts))

    def test_trial_stream_matches_blocks(self):
        sc = ChangeScenario.immediate(2, PoissonShift())
        src = SeededSource(9, 2)
        it = trial_stream(sc, src, 4, uniforms_per_step=8)
        steps = [next(it) for _ in range(5)]
        mask = affected_mask(sc, 4, src)
        block = generate_block(sc, src.observation_rng(), mask, 1, 5)
        np.testing.assert_array_equal(np.array([x for x, _ in steps]), block)
        u = np.random.Generator(src.uniform_bitgen()).random(40).reshape(5, 2, 4)
        np.testing.assert_array_equal(np.array([v for _, v in steps]), u)


class TestLaws:
    def test_pre_and_post_change(self):
        sc = ChangeScenario(51, FixedSubset.first(3), NormalShift(2.0))
        mask = affected_mask(sc, 6, SeededSource(0, 0))
        x = generate_block(sc, SeededSource(0, 0).observation_rng(), mask, 1, 20_050)
        pre, post = x[:50], x[50:]
        assert abs(pre.mean()) < 0.5
        np.testing.assert_allclose(post.mean(axis=0), [2, 2, 2, 0, 0, 0], atol=0.05)

    def test_poisson_means(self):
        sc = ChangeScenario.immediate(1, PoissonShift(0.015, 0.3))
        mask = affected_mask(sc, 2, SeededSource(0, 0))
        x = generate_block(sc, SeededSource(0, 0).observation_rng(), mask, 1, 200_000)
        mean = np.array([0.3, 0.015])
        assert np.all(np.abs(x.mean(axis=0) - mean) < 4 * np.sqrt(mean / x.shape[0]))

    def test_binomial_means(self):
        sc = ChangeScenario.immediate(1, BinomialShift(5, 0.001, 0.05))
        mask = affected_mask(sc, 2, SeededSource(0, 0))
        x = generate_block(sc, SeededSource(0, 0).observation_rng(), mask, 1, 200_000)
        mean = np.array([0.25, 0.005])
        var = np.array([5 * 0.05 * 0.95, 5 * 0.001 * 0.999])
        assert np.all(np.abs(x.mean(axis=0) - mean) < 4 * np.sqrt(var / x.shape[0]))
        assert x.max() <= 5

    def test_null_step(self):
        sc = ChangeScenario.null()
        x = generate_step(sc, np.random.default_rng(0), np.zeros(4, dtype=bool), 10)
        assert x.shape == (4,)

    def test_bernoulli_subset(self):
        rng = np.random.default_rng(1)
        sizes = [draw_subset(rng, 1000, 0.1).size for _ in range(50)]
        assert 90 < np.mean(sizes) < 110
        sc = ChangeScenario(1, BernoulliSubset(0.5))
        m1 = affected_mask(sc, 64, SeededSource(5, 1))
        m2 = affected_mask(sc, 64, SeededSource(5, 1))
        np.testing.assert_array_equal(m1, m2)

    def test_null_specs(self):
        assert NormalShift().null_spec() is None
        assert PoissonShift().null_spec().poisson_mean == 0.015
        assert BinomialShift().null_spec().trials == 5
