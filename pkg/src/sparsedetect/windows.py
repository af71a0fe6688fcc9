"""Window sets and the per-stream observation ring buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

__all__ = ["WindowSet", "build_window_set", "ObservationBuffer", "REFRESH_PERIOD"]

# prefix sums are rebuilt from the raw ring this often to bound drift
REFRESH_PERIOD = 1 << 16


@dataclass(frozen=True)
class WindowSet:
    """Window lengths ``{1..k1} U {floor(r^j k1) : j >= 1}`` truncated at ``cap``."""

    base: int
    ratio: float
    cap: int
    lengths: tuple[int, ...] = field(compare=False)

    def __post_init__(self) -> None:
        ls = self.lengths
        if not ls or ls[0] != 1 or any(b <= a for a, b in zip(ls, ls[1:])) or ls[-1] > self.cap:
            raise ValueError(f"invalid window lengths {ls[:8]}...")

    @property
    def max_length(self) -> int:
        return self.lengths[-1]

    def __len__(self) -> int:
        return len(self.lengths)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=np.int64)


def build_window_set(k1: int, r: float, cap: int) -> WindowSet:
    """Build the window set for base ``k1``, growth ratio ``r`` and cap.

    Geometric lengths are floored in exact rational arithmetic on the binary
    value of ``r``, so e.g. ``floor(2**3 * 1)`` is never lost to rounding.
    ``cap < k1`` is allowed and yields ``{1..cap}``.
    """
    if int(k1) != k1 or k1 < 1:
        raise ValueError(f"k1 must be a positive integer, got {k1}")
    if int(cap) != cap or cap < 1:
        raise ValueError(f"cap must be a positive integer, got {cap}")
    if not r > 1.0 or not math.isfinite(r):
        raise ValueError(f"r must be > 1, got {r}")
    k1, cap = int(k1), int(cap)
    lengths = list(range(1, min(k1, cap) + 1))
    ratio = Fraction(r)
    j = 1
    while True:
        value = math.floor(ratio**j * k1)
        if value > cap:
            break
        if value > lengths[-1]:
            lengths.append(value)
            # skip exponents that cannot reach the next integer
            need = math.log((value + 1) / k1) / math.log(r)
            j = max(j + 1, int(need) - 1)
        else:
            j += 1
    return WindowSet(base=k1, ratio=float(r), cap=cap, lengths=tuple(lengths))


@njit(cache=True)
def ring_push(prefix, obs, t, x):
    """Append observation vector ``x`` at time ``t + 1``; returns the new time.

    ``prefix`` holds running sums P_t at row ``t % (cap + 1)``; ``obs`` holds
    raw observations at row ``t % cap``.
    """
    rp = prefix.shape[0]
    cap = obs.shape[0]
    n_streams = prefix.shape[1]
    t1 = t + 1
    cur = t1 % rp
    prev = t % rp
    orow = t1 % cap
    for n in range(n_streams):
        obs[orow, n] = x[n]
        prefix[cur, n] = prefix[prev, n] + x[n]
    if t1 % 65536 == 0:
        ring_refresh(prefix, obs, t1)
    return t1


@njit(cache=True)
def ring_refresh(prefix, obs, t):
    """Rebuild the retained prefix sums exactly from the raw ring."""
    rp = prefix.shape[0]
    cap = obs.shape[0]
    n_streams = prefix.shape[1]
    depth = min(t, cap)
    base = (t - depth) % rp
    for n in range(n_streams):
        prefix[base, n] = 0.0
    for i in range(t - depth + 1, t + 1):
        cur = i % rp
        prev = (i - 1) % rp
        orow = i % cap
        for n in range(n_streams):
            prefix[cur, n] = prefix[prev, n] + obs[orow, n]


class ObservationBuffer:
    """Last ``capacity`` observations of N streams with O(1) window sums.

    ``window_sums(k)`` returns ``S_k = P_t - P_{t-k}`` for every stream, valid
    for ``k <= min(time, capacity)``.
    """

    def __init__(self, num_streams: int, capacity: int) -> None:
        if num_streams < 1 or capacity < 1:
            raise ValueError("num_streams and capacity must be positive")
        self.num_streams = int(num_streams)
        self.capacity = int(capacity)
        self.prefix = np.zeros((self.capacity + 1, self.num_streams))
        self.obs = np.zeros((self.capacity, self.num_streams))
        self.time = 0

    def push(self, x) -> None:
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.num_streams,):
            raise ValueError(f"expected {self.num_streams} observations, got shape {x.shape}")
        self.time = int(ring_push(self.prefix, self.obs, self.time, x))

    def _check_window(self, k: int) -> None:
        if k < 1 or k > min(self.time, self.capacity):
            raise ValueError(
                f"window {k} unavailable at time {self.time} with capacity {self.capacity}"
            )

    def window_sums(self, k: int) -> np.ndarray:
        self._check_window(k)
        rp = self.capacity + 1
        return self.prefix[self.time % rp] - self.prefix[(self.time - k) % rp]

    def window_zscores(self, k: int) -> np.ndarray:
        return self.window_sums(k) / math.sqrt(k)

    def available(self, windows: WindowSet) -> list[int]:
        """Window lengths of ``windows`` usable at the current time."""
        limit = min(self.time, self.capacity)
        return [k for k in windows.lengths if k <= limit]
