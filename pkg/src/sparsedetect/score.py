"""Sparsity-likelihood score functions.

The per-stream score is the log of a two-term perturbation of the uniform
p-value density::

    l(p) = log(1 + w1 * f1(p) + w2 * f2(p))
    w1 = lambda1 * log(N) / N
    w2 = lambda2 / sqrt(N * log(N))

with ``f1(p) = 1 / (p * (2 - log p)**2) - 1/2`` (heavy tail, extreme sparsity)
and ``f2(p) = p**-0.5 - 2`` (moderate tail). Both integrate to zero on (0, 1],
so ``exp(l(p))`` is a probability density on (0, 1] and the aggregate score of
N independent uniform p-values is a log likelihood ratio with mean-one
exponential under the null.

All functions accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparsityParams",
    "f1",
    "f2",
    "stream_score",
    "aggregate_score",
    "default_lambda2",
]


def _as_pvalues(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    # written so that NaN fails as well
    if not np.all((arr > 0.0) & (arr <= 1.0)):
        raise ValueError("p-values must lie in (0, 1]")
    return arr


def _unwrap(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def _f1_raw(p: np.ndarray) -> np.ndarray:
    return 1.0 / (p * (2.0 - np.log(p)) ** 2) - 0.5


def _f2_raw(p: np.ndarray) -> np.ndarray:
    return 1.0 / np.sqrt(p) - 2.0


def f1(p):
    """Heavy-tail score component ``1/(p (2 - log p)^2) - 1/2``."""
    return _unwrap(_f1_raw(_as_pvalues(p)))


def f2(p):
    """Moderate-tail score component ``1/sqrt(p) - 2``."""
    return _unwrap(_f2_raw(_as_pvalues(p)))


@dataclass(frozen=True)
class SparsityParams:
    """Parameters (N, lambda1, lambda2) of the sparsity-likelihood score.

    Construction fails unless the argument of the log stays positive at
    p = 1. Since f1 and f2 both decrease on (0, 1], that single check covers
    every p in the domain.
    """

    num_streams: int
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self) -> None:
        if int(self.num_streams) != self.num_streams or self.num_streams < 2:
            raise ValueError(f"num_streams must be an integer >= 2, got {self.num_streams}")
        if not (self.lambda1 >= 0.0) or not math.isfinite(self.lambda1):
            raise ValueError(f"lambda1 must be finite and >= 0, got {self.lambda1}")
        if not (self.lambda2 > 0.0) or not math.isfinite(self.lambda2):
            raise ValueError(f"lambda2 must be finite and > 0, got {self.lambda2}")
        floor = 1.0 - 0.25 * self.weight1 - self.weight2
        if floor <= 0.0:
            raise ValueError(
                "score undefined near p = 1: "
                f"1 - lambda1 log N/(4N) - lambda2/sqrt(N log N) = {floor:.6g} <= 0"
            )

    @property
    def weight1(self) -> float:
        n = self.num_streams
        return self.lambda1 * math.log(n) / n

    @property
    def weight2(self) -> float:
        n = self.num_streams
        return self.lambda2 / math.sqrt(n * math.log(n))


def stream_score(params: SparsityParams, p):
    """Per-stream score l(p); non-increasing in p."""
    arr = _as_pvalues(p)
    arg = params.weight1 * _f1_raw(arr) + params.weight2 * _f2_raw(arr)
    if np.any(arg <= -1.0):
        raise ValueError("score argument is non-positive")
    return _unwrap(np.log1p(arg))


def aggregate_score(params: SparsityParams, pvec):
    """Sum of stream scores over the last axis of ``pvec``.

    The last axis must have length ``params.num_streams``. Terms are added
    sequentially in ascending stream order so results are bit-stable; a 2-D
    input scores each row.
    """
    arr = np.asarray(pvec, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != params.num_streams:
        raise ValueError(
            f"expected {params.num_streams} p-values on the last axis, got shape {arr.shape}"
        )
    terms = np.asarray(stream_score(params, arr))
    # cumsum is strictly sequential, unlike the pairwise np.sum
    return _unwrap(np.cumsum(terms, axis=-1)[..., -1])


def default_lambda2(gamma: float) -> float:
    """Default moderate-tail weight ``sqrt(log gamma / log log gamma)``.

    Requires ``gamma > e**e``, where ``log gamma / log log gamma`` is
    increasing.
    """
    if not gamma > math.exp(math.e):
        raise ValueError(f"default lambda2 requires gamma > e^e, got {gamma}")
    lg = math.log(gamma)
    return math.sqrt(lg / math.log(lg))
