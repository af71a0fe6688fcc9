from __future__ import annotations

import math

import numpy as np
import pytest

from sparsedetect import kernels
from sparsedetect.montecarlo import compile_rule
from sparsedetect.pvalue import DiscreteNullSpec
from sparsedetect.rules import MLR_LAMBDA, RuleConfig, stream_terms
from sparsedetect.score import SparsityParams, stream_score
from sparsedetect.windows import build_window_set

W = build_window_set(3, 2.0, 12)
SP = SparsityParams(100, 1.0, 1.99)
WINDOWED = [
    RuleConfig.sl(SP, W),
    RuleConfig.sl(SP, W, one_sided=True),
    RuleConfig.xs(100, 0.1, W),
    RuleConfig.xs(100, 1.0, W),
    RuleConfig.modified_mlr(100, 0.1, W),
    RuleConfig.modified_mlr(100, 0.3, W),
]


class TestCubicTables:
    def test_polynomial_reproduced(self):
        coef, lo, inv = kernels.build_cubic_table(lambda x: 1 + x - 2 * x**2 + 0.5 * x**3, -1.0, 1.0, 0.25)
        for x in np.linspace(-1, 0.999, 37):
            assert kernels.table_eval(coef, (x - lo) * inv) == pytest.approx(1 + x - 2 * x**2 + 0.5 * x**3, abs=1e-13)

    def test_needs_four_nodes(self):
        with pytest.raises(ValueError):
            kernels.build_cubic_table(np.sin, 0.0, 1.0, 0.5)

    @pytest.mark.parametrize("rule", WINDOWED, ids=lambda r: r.label)
    def test_term_table_accuracy(self, rule):
        c = compile_rule(rule)
        z = np.linspace(-12.0, 12.0, 200_001)
        err = np.abs(c.table_term(z) - stream_terms(rule, z))
        assert err.max() <= 1e-9

    @pytest.mark.parametrize("rule", WINDOWED, ids=lambda r: r.label)
    def test_exact_fallback(self, rule):
        c = compile_rule(rule)
        for z in (-30.0, -10.5, 10.5, 25.0):
            assert kernels.term_exact(c.term, z, c.kp) == pytest.approx(float(stream_terms(rule, np.array([z]))[0]), rel=1e-12, abs=1e-13)


class TestBinadeTable:
    def test_accuracy(self):
        coef = kernels.build_binade_table(lambda p: stream_score(SP, p))
        p = np.concatenate([np.logspace(-19.2, 0, 20_000), [0.5, 0.25, 1.0, 2.0**-63]])
        got = np.array([kernels.binade_eval(coef, v) for v in p])
        assert np.max(np.abs(got - stream_score(SP, p))) <= 1e-9

    def test_below_range(self):
        coef = kernels.build_binade_table(lambda p: stream_score(SP, p), num_binades=8)
        assert math.isnan(kernels.binade_eval(coef, 2.0**-9))

    def test_exact_score(self):
        for p in (1e-300, 1e-12, 0.3, 1.0):
            assert kernels.sl_score_exact(p, SP.weight1, SP.weight2) == pytest.approx(stream_score(SP, p), rel=1e-13)
        assert kernels.sl_score_exact(0.0, SP.weight1, SP.weight2) == kernels.sl_score_exact(1e-300, SP.weight1, SP.weight2)


class TestDetectability:
    def test_matches_direct_form(self):
        for x in (0.0, 1.0, 2.0, 30.0):
            direct = math.log(1 + 0.1 * (MLR_LAMBDA * math.exp(x / 2) - 1))
            assert kernels.detectability(x, 0.1, MLR_LAMBDA) == pytest.approx(direct, rel=1e-13, abs=1e-15)


class TestDiscreteCompile:
    def test_tables_cover_support(self):
        null = DiscreteNullSpec.poisson(0.015)
        rule = RuleConfig.sl(SP, build_window_set(4, 2.0, 4), null=null)
        c = compile_rule(rule)
        assert c.engine == "discrete"
        assert c.lo_tab.shape[0] == 4
        np.testing.assert_allclose(c.lo_tab + c.pmf_tab + c.up_tab, 1.0, atol=1e-13)
