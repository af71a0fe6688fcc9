"""P-values for windowed statistics.

Normal model: one- and two-sided tail probabilities of the standardized
window sum. Poisson and binomial models: randomized (continuity corrected)
two-sided p-values, exactly Uniform(0, 1) under the null when the auxiliary
uniform ``u`` is independent of the data.

Every p-value is clamped to ``[P_FLOOR, 1]`` so downstream scores stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erfc, erfcx, gammaln

__all__ = [
    "P_FLOOR",
    "DiscreteFamily",
    "DiscreteNullSpec",
    "std_normal_cdf",
    "normal_two_sided",
    "normal_one_sided",
    "discrete_tails",
    "discrete_pvalue",
    "randomized_pvalue",
]

P_FLOOR = 1e-300

_SQRT2 = math.sqrt(2.0)


def _unwrap(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def std_normal_cdf(x):
    """Standard normal distribution function.

    Uses ``erfc`` on the upper half and the scaled complement ``erfcx`` in
    log space on the lower tail, which keeps full relative accuracy down to
    the subnormal range (Phi(-38) ~ 2.9e-316).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    tail = x < -1.0
    xt = x[tail]
    out[tail] = np.exp(np.log(0.5 * erfcx(-xt / _SQRT2)) - 0.5 * xt * xt)
    out[~tail] = 0.5 * erfc(-x[~tail] / _SQRT2)
    return _unwrap(out)


def normal_two_sided(z):
    """``2 * Phi(-|z|)`` clamped to ``[P_FLOOR, 1]``."""
    z = np.asarray(z, dtype=float)
    p = 2.0 * np.asarray(std_normal_cdf(-np.abs(z)))
    return _unwrap(np.clip(p, P_FLOOR, 1.0))


def normal_one_sided(z):
    """``Phi(-z)`` clamped to ``[P_FLOOR, 1]``; small for large positive z."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(std_normal_cdf(-z))
    return _unwrap(np.clip(p, P_FLOOR, 1.0))


class DiscreteFamily(str, Enum):
    POISSON = "poisson"
    BINOMIAL = "binomial"


@dataclass(frozen=True)
class DiscreteNullSpec:
    """Null law of a count statistic.

    For a window sum over ``k`` observations use :meth:`for_window`, which
    scales the per-observation parameters to ``Poisson(k * mean)`` or
    ``Binomial(k * trials, success_prob)``.
    """

    family: DiscreteFamily
    poisson_mean: float | None = None
    trials: int | None = None
    success_prob: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", DiscreteFamily(self.family))
        if self.family is DiscreteFamily.POISSON:
            if self.poisson_mean is None or not self.poisson_mean >= 0.0:
                raise ValueError("poisson null needs a non-negative poisson_mean")
            if self.trials is not None or self.success_prob is not None:
                raise ValueError("poisson null takes no binomial parameters")
        else:
            if self.trials is None or int(self.trials) != self.trials or self.trials < 1:
                raise ValueError("binomial null needs a positive integer number of trials")
            if self.success_prob is None or not 0.0 < self.success_prob < 1.0:
                raise ValueError("binomial success_prob must lie in (0, 1)")
            if self.poisson_mean is not None:
                raise ValueError("binomial null takes no poisson_mean")

    @classmethod
    def poisson(cls, mean: float) -> "DiscreteNullSpec":
        return cls(DiscreteFamily.POISSON, poisson_mean=float(mean))

    @classmethod
    def binomial(cls, trials: int, success_prob: float) -> "DiscreteNullSpec":
        return cls(DiscreteFamily.BINOMIAL, trials=int(trials), success_prob=float(success_prob))

    def for_window(self, k: int) -> "DiscreteNullSpec":
        if self.family is DiscreteFamily.POISSON:
            return DiscreteNullSpec.poisson(k * self.poisson_mean)
        return DiscreteNullSpec.binomial(k * self.trials, self.success_prob)

    @property
    def mean(self) -> float:
        if self.family is DiscreteFamily.POISSON:
            return self.poisson_mean
        return self.trials * self.success_prob

    def support_limit(self) -> int:
        """Largest count whose probability is not negligible (< 1e-320)."""
        if self.family is DiscreteFamily.BINOMIAL:
            return self.trials
        mu = self.poisson_mean
        if mu == 0.0:
            return 0
        x = max(1, int(mu))
        step = max(16, int(10 * math.sqrt(mu)))
        while self.log_pmf(np.array([x]))[0] > -737.0:
            x += step
        return x

    def log_pmf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family is DiscreteFamily.POISSON:
            mu = self.poisson_mean
            if mu == 0.0:
                return np.where(x == 0, 0.0, -np.inf)
            return x * math.log(mu) - mu - gammaln(x + 1.0)
        n, q = self.trials, self.success_prob
        out = (
            gammaln(n + 1.0)
            - gammaln(x + 1.0)
            - gammaln(n - x + 1.0)
            + x * math.log(q)
            + (n - x) * math.log1p(-q)
        )
        return np.where((x >= 0) & (x <= n), out, -np.inf)

    def pmf_table(self, limit: int | None = None) -> np.ndarray:
        """pmf on ``0..limit`` (default: the support limit)."""
        top = self.support_limit() if limit is None else int(limit)
        return np.exp(self.log_pmf(np.arange(top + 1)))


def discrete_tails(null: DiscreteNullSpec, width: int | None = None):
    """Tail tables ``lo[s] = P(X < s)``, ``pmf[s]``, ``up[s] = P(X > s)``.

    Computed by direct pmf summation: the lower tail accumulates upward from
    0, the upper tail accumulates downward from the far end of the support so
    that small upper-tail probabilities keep full relative precision. Counts
    past the support limit have all three entries at their limiting values
    (1, 0, 0).
    """
    support = null.support_limit()
    pmf_full = null.pmf_table(support)
    lo_full = np.concatenate(([0.0], np.cumsum(pmf_full)[:-1]))
    up_full = np.concatenate((np.cumsum(pmf_full[::-1])[::-1][1:], [0.0]))
    np.clip(lo_full, 0.0, 1.0, out=lo_full)
    np.clip(up_full, 0.0, 1.0, out=up_full)
    if width is None:
        width = support + 1
    lo = np.ones(width)
    pmf = np.zeros(width)
    up = np.zeros(width)
    m = min(width, support + 1)
    lo[:m] = lo_full[:m]
    pmf[:m] = pmf_full[:m]
    up[:m] = up_full[:m]
    return lo, pmf, up


def randomized_pvalue(lo, pmf, up, u):
    """``2 * min(phi, 1 - phi)`` with ``phi = lo + u * pmf``.

    ``1 - phi`` is formed as ``up + (1 - u) * pmf`` to avoid cancellation
    when phi is close to 1.
    """
    lo, pmf, up, u = (np.asarray(a, dtype=float) for a in (lo, pmf, up, u))
    phi = lo + u * pmf
    comp = up + (1.0 - u) * pmf
    p = 2.0 * np.minimum(phi, comp)
    return _unwrap(np.clip(p, P_FLOOR, 1.0))


def discrete_pvalue(observed_sum: int, null: DiscreteNullSpec, u: float) -> float:
    """Randomized two-sided p-value of a count under ``null``.

    ``u`` must come from the caller's random source and lie in [0, 1).
    """
    s = int(observed_sum)
    if s != observed_sum or s < 0:
        raise ValueError(f"observed_sum must be a non-negative integer, got {observed_sum}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    support = null.support_limit()
    if s > support:
        return P_FLOOR
    pmf = null.pmf_table(support)
    lo = math.fsum(pmf[:s])
    up = math.fsum(pmf[s + 1 :])
    return float(randomized_pvalue(min(lo, 1.0), pmf[s], min(up, 1.0), u))
