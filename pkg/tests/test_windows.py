from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedetect.windows import REFRESH_PERIOD, ObservationBuffer, build_window_set


def oracle_window_set(k1: int, r: Fraction, cap: int) -> list[int]:
    lengths = set(range(1, min(k1, cap) + 1))
    j = 1
    while True:
        v = math.floor(r**j * k1)
        if v > cap:
            break
        lengths.add(v)
        j += 1
    return sorted(lengths)


class TestWindowSet:
    def test_dyadic(self):
        assert build_window_set(1, 2.0, 8).lengths == (1, 2, 4, 8)

    def test_full_range(self):
        assert build_window_set(200, 3.7, 200).lengths == tuple(range(1, 201))

    def test_fractional_ratio(self):
        # 4.5, 6.75, 10.125 floor to 4, 6, 10; 15.19 exceeds the cap
        assert build_window_set(3, 1.5, 10).lengths == (1, 2, 3, 4, 6, 10)

    def test_cap_below_base(self):
        assert build_window_set(10, 2.0, 4).lengths == (1, 2, 3, 4)

    @pytest.mark.parametrize("args", [(0, 2.0, 10), (3, 1.0, 10), (3, 0.5, 10), (3, 2.0, 0), (2.5, 2.0, 10)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            build_window_set(*args)

    @given(st.integers(1, 30), st.sampled_from([1.01, 1.1, 1.25, 1.5, 2.0, 2.5, 3.0, 10.0]),
           st.integers(1, 3000))
    def test_matches_oracle(self, k1, r, cap):
        ws = build_window_set(k1, r, cap)
        assert list(ws.lengths) == oracle_window_set(k1, Fraction(r), cap)
        assert ws.max_length <= cap


class TestObservationBuffer:
    def test_naive_sums(self, rng):
        n, cap = 7, 25
        buf = ObservationBuffer(n, cap)
        history = []
        for _ in range(10_000):
            x = rng.normal(size=n)
            buf.push(x)
            history.append(x)
            if len(history) > cap:
                history.pop(0)
            k = int(rng.integers(1, min(buf.time, cap) + 1))
            naive = np.sum(history[-k:], axis=0)
            assert np.max(np.abs(buf.window_sums(k) - naive)) <= 1e-9

    def test_refresh_keeps_exact_sums(self, rng):
        buf = ObservationBuffer(2, 5)
        big = 1e8
        for _ in range(REFRESH_PERIOD + 3):
            buf.push(np.array([big, rng.normal()]))
        tail = np.array([[1.0, 2.0], [3.0, 4.0]])
        for x in tail:
            buf.push(x)
        np.testing.assert_array_equal(buf.window_sums(2), tail.sum(axis=0))

    def test_refresh_on_integer_data(self):
        buf = ObservationBuffer(1, 3)
        for i in range(2 * REFRESH_PERIOD + 1):
            buf.push(np.array([float(i % 7)]))
        t = buf.time
        expected = sum(float(i % 7) for i in range(t - 3, t))
        assert buf.window_sums(3)[0] == expected

    def test_time_and_availability(self):
        ws = build_window_set(1, 2.0, 8)
        buf = ObservationBuffer(3, ws.max_length)
        assert buf.available(ws) == []
        for t in range(1, 6):
            buf.push(np.zeros(3))
            assert buf.time == t
        assert buf.available(ws) == [1, 2, 4]

    def test_window_checks(self):
        buf = ObservationBuffer(2, 4)
        buf.push(np.ones(2))
        with pytest.raises(ValueError):
            buf.window_sums(2)
        with pytest.raises(ValueError):
            buf.push(np.ones(3))

    def test_zscores(self):
        buf = ObservationBuffer(1, 4)
        for _ in range(4):
            buf.push(np.array([1.0]))
        assert buf.window_zscores(4)[0] == pytest.approx(2.0)
