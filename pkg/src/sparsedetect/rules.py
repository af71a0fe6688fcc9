"""Stopping-rule statistics (exact reference implementations).

Windowed rules maximize a sum of per-stream terms over the window lengths
``k`` currently available in an :class:`~sparsedetect.windows.ObservationBuffer`:

* ``sl_two_sided`` / ``sl_one_sided``: sparsity-likelihood score of the
  window p-values (two-sided ``2 Phi(-|z|)`` or one-sided ``Phi(-z)``; for
  count data, randomized two-sided p-values under a discrete null);
* ``xs``: mixture likelihood ratio ``log(1 - e0 + e0 exp(z+^2 / 2))``;
* ``modified_mlr``: ``log(1 + e0 (lam exp(z+^2 / 4) - 1))`` with
  ``lam = 2 (sqrt 2 - 1)``.

The CUSUM rules keep one score per stream,
``R_t = max(R_{t-1} + d0 X_t - d0^2 / 2, 0)``, and either sum the scores
(``mei``) or sum ``log(1 + e0 (lam_M exp(R/2) - 1))`` (``mei_eps``). The
default ``lam_M`` is :func:`mei_lambda`, which plays the role that
``2 (sqrt 2 - 1)`` plays for the modified MLR: it makes
``E[lam_M exp(R/2)] = 1`` under the stationary pre-change law of ``R``.

These functions evaluate every term exactly and are meant for testing and
small runs; :mod:`sparsedetect.montecarlo` drives the compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
from scipy.special import log_ndtr

from .pvalue import DiscreteNullSpec, discrete_tails, normal_one_sided, normal_two_sided, randomized_pvalue
from .score import SparsityParams, aggregate_score, stream_score
from .windows import ObservationBuffer, WindowSet

__all__ = [
    "MLR_LAMBDA",
    "mei_lambda",
    "RuleKind",
    "RuleConfig",
    "StopDecision",
    "RunResult",
    "MeiState",
    "stream_terms",
    "window_statistics",
    "sl_statistic",
    "xs_statistic",
    "modified_mlr_statistic",
    "evaluate",
    "mei_step",
    "mei_eps_statistic",
    "run_rule",
]

MLR_LAMBDA = 2.0 * (math.sqrt(2.0) - 1.0)


def mei_lambda(delta0: float = 1.0) -> float:
    """``1 / E[exp(R/2)]`` for the stationary pre-change CUSUM score ``R``.

    ``R`` is the all-time maximum of a random walk with N(-d0^2/2, d0^2)
    steps, so Spitzer's identity gives
    ``log E[exp(R/2)] = sum_n (E[exp(S_n/2); S_n > 0] - P(S_n > 0)) / n``,
    whose terms decay like ``exp(-n d0^2 / 8)``.
    """
    if not delta0 > 0.0 or not math.isfinite(delta0):
        raise ValueError(f"delta0 must be positive and finite, got {delta0}")
    d2 = delta0 * delta0
    # E[exp(S_n/2); S_n > 0] = exp(-n d0^2/8) / 2, whose series sums in closed form.
    tilted = -0.5 * math.log(-math.expm1(-d2 / 8.0))
    n = np.arange(1.0, math.ceil(320.0 / d2) + 64.0)
    positive = np.exp(log_ndtr(-0.5 * delta0 * np.sqrt(n)))
    return math.exp(np.sum(positive / n) - tilted)


class RuleKind(str, Enum):
    SL_TWO_SIDED = "sl_two_sided"
    SL_ONE_SIDED = "sl_one_sided"
    XS = "xs"
    MEI = "mei"
    MEI_EPS = "mei_eps"
    MODIFIED_MLR = "modified_mlr"

    @property
    def windowed(self) -> bool:
        return self not in (RuleKind.MEI, RuleKind.MEI_EPS)

    @property
    def is_sl(self) -> bool:
        return self in (RuleKind.SL_TWO_SIDED, RuleKind.SL_ONE_SIDED)


@dataclass(frozen=True)
class RuleConfig:
    """Full parameterization of one stopping rule.

    ``null`` is the per-observation null law for count data; when set, the
    two-sided SL rule scores randomized discrete p-values of the raw window
    sums instead of normal p-values of z-scores.
    """

    kind: RuleKind
    num_streams: int
    sparsity: SparsityParams | None = None
    windows: WindowSet | None = None
    epsilon0: float | None = None
    delta0: float | None = None
    lambda_m: float | None = None
    null: DiscreteNullSpec | None = None
    label: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        kind = RuleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.num_streams) != self.num_streams or self.num_streams < 1:
            raise ValueError("num_streams must be a positive integer")
        if kind.windowed and self.windows is None:
            raise ValueError(f"{kind.value} needs a window set")
        if kind.is_sl:
            if self.sparsity is None:
                raise ValueError(f"{kind.value} needs sparsity parameters")
            if self.sparsity.num_streams != self.num_streams:
                raise ValueError("sparsity.num_streams does not match num_streams")
        if kind in (RuleKind.XS, RuleKind.MEI_EPS, RuleKind.MODIFIED_MLR):
            if self.epsilon0 is None or not 0.0 < self.epsilon0 <= 1.0:
                raise ValueError(f"{kind.value} needs epsilon0 in (0, 1]")
        if kind in (RuleKind.MEI, RuleKind.MEI_EPS):
            if self.delta0 is None or not self.delta0 > 0.0:
                raise ValueError(f"{kind.value} needs delta0 > 0")
        if kind is RuleKind.MEI_EPS and (self.lambda_m is None or not self.lambda_m > 0.0):
            raise ValueError("mei_eps needs lambda_m > 0")
        if self.null is not None and kind is not RuleKind.SL_TWO_SIDED:
            raise ValueError("discrete nulls are only supported by sl_two_sided")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self) -> str:
        k = self.kind
        if k.is_sl:
            tag = "SL1" if k is RuleKind.SL_ONE_SIDED else "SL"
            return f"{tag}({self.sparsity.lambda1:g},{self.sparsity.lambda2:.3g})"
        if k is RuleKind.XS:
            return f"XS({self.epsilon0:g})"
        if k is RuleKind.MEI:
            return "Mei"
        if k is RuleKind.MEI_EPS:
            return f"Mei({self.epsilon0:g})"
        return f"S({self.epsilon0:g})"

    # convenience constructors
    @classmethod
    def sl(cls, params: SparsityParams, windows: WindowSet, *, one_sided: bool = False,
           null: DiscreteNullSpec | None = None, label: str = "") -> "RuleConfig":
        kind = RuleKind.SL_ONE_SIDED if one_sided else RuleKind.SL_TWO_SIDED
        return cls(kind, params.num_streams, sparsity=params, windows=windows, null=null, label=label)

    @classmethod
    def xs(cls, num_streams: int, epsilon0: float, windows: WindowSet, label: str = "") -> "RuleConfig":
        return cls(RuleKind.XS, num_streams, windows=windows, epsilon0=epsilon0, label=label)

    @classmethod
    def modified_mlr(cls, num_streams: int, epsilon0: float, windows: WindowSet,
                     label: str = "") -> "RuleConfig":
        return cls(RuleKind.MODIFIED_MLR, num_streams, windows=windows, epsilon0=epsilon0, label=label)

    @classmethod
    def mei(cls, num_streams: int, delta0: float = 1.0, label: str = "") -> "RuleConfig":
        return cls(RuleKind.MEI, num_streams, delta0=delta0, label=label)

    @classmethod
    def mei_eps(cls, num_streams: int, epsilon0: float, delta0: float = 1.0,
                lambda_m: float | None = None, label: str = "") -> "RuleConfig":
        """``lambda_m=None`` selects :func:`mei_lambda` of ``delta0``."""
        if lambda_m is None:
            lambda_m = mei_lambda(delta0)
        return cls(RuleKind.MEI_EPS, num_streams, epsilon0=epsilon0, delta0=delta0,
                   lambda_m=lambda_m, label=label)

    def describe(self) -> str:
        """Compact ``key=value`` parameter string."""
        parts = []
        if self.sparsity is not None:
            parts += [f"lambda1={self.sparsity.lambda1:g}", f"lambda2={self.sparsity.lambda2:.6g}"]
        for name in ("epsilon0", "delta0", "lambda_m"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value:.6g}")
        if self.windows is not None:
            w = self.windows
            parts.append(f"windows={w.base}/{w.ratio:g}/{w.cap}")
        return ";".join(parts)


@dataclass(frozen=True)
class StopDecision:
    statistic: float
    stopped: bool
    best_window: int | None = None


@dataclass(frozen=True)
class RunResult:
    """Outcome of driving a rule over a data source."""

    stop_time: int
    censored: bool
    final_statistic: float
    max_statistic: float


def _xs_term(z: np.ndarray, eps: float) -> np.ndarray:
    zp = np.maximum(z, 0.0)
    y = 0.5 * zp * zp
    return y + np.log(eps + (1.0 - eps) * np.exp(-y))


def _mlr_term(z: np.ndarray, eps: float) -> np.ndarray:
    zp = np.maximum(z, 0.0)
    y = 0.25 * zp * zp
    return y + np.log(eps * MLR_LAMBDA + (1.0 - eps) * np.exp(-y))


def stream_terms(config: RuleConfig, z) -> np.ndarray:
    """Exact per-stream terms of a windowed normal rule at z-scores ``z``."""
    z = np.asarray(z, dtype=float)
    kind = config.kind
    if kind is RuleKind.SL_TWO_SIDED:
        return np.asarray(stream_score(config.sparsity, normal_two_sided(z)))
    if kind is RuleKind.SL_ONE_SIDED:
        return np.asarray(stream_score(config.sparsity, normal_one_sided(z)))
    if kind is RuleKind.XS:
        return _xs_term(z, config.epsilon0)
    if kind is RuleKind.MODIFIED_MLR:
        return _mlr_term(z, config.epsilon0)
    raise ValueError(f"{kind.value} has no per-window terms")


def _window_pvalues(config: RuleConfig, buffer: ObservationBuffer, j: int, k: int, uniforms):
    sums = buffer.window_sums(k)
    if config.null is None:
        z = sums / math.sqrt(k)
        if config.kind is RuleKind.SL_ONE_SIDED:
            return normal_one_sided(z)
        return normal_two_sided(z)
    if uniforms is None:
        raise ValueError("discrete p-values need auxiliary uniforms")
    lo, pmf, up = discrete_tails(config.null.for_window(k))
    s = np.rint(sums).astype(np.int64)
    inside = s < lo.size
    sc = np.minimum(s, lo.size - 1)
    p = randomized_pvalue(lo[sc], pmf[sc], up[sc], np.asarray(uniforms)[j])
    return np.where(inside, p, 1e-300)


def window_statistics(config: RuleConfig, buffer: ObservationBuffer, uniforms=None):
    """Per-window statistic for every window length available now.

    ``uniforms`` (shape ``(len(windows), N)``) is required for discrete SL.
    Returns ``(lengths, values)``.
    """
    if not config.kind.windowed:
        raise ValueError(f"{config.kind.value} is not a windowed rule")
    if buffer.time < 1:
        raise ValueError("buffer holds no observations")
    lengths = buffer.available(config.windows)
    values = np.empty(len(lengths))
    for j, k in enumerate(lengths):
        if config.kind.is_sl:
            values[j] = aggregate_score(config.sparsity, _window_pvalues(config, buffer, j, k, uniforms))
        else:
            terms = stream_terms(config, buffer.window_zscores(k))
            values[j] = np.cumsum(terms)[-1]
    return lengths, values


def sl_statistic(config: RuleConfig, buffer: ObservationBuffer, uniforms=None) -> float:
    if not config.kind.is_sl:
        raise ValueError("not a sparsity-likelihood rule")
    return float(np.max(window_statistics(config, buffer, uniforms)[1]))


def xs_statistic(config: RuleConfig, buffer: ObservationBuffer) -> float:
    if config.kind is not RuleKind.XS:
        raise ValueError("not an xs rule")
    return float(np.max(window_statistics(config, buffer)[1]))


def modified_mlr_statistic(config: RuleConfig, buffer: ObservationBuffer) -> float:
    if config.kind is not RuleKind.MODIFIED_MLR:
        raise ValueError("not a modified_mlr rule")
    return float(np.max(window_statistics(config, buffer)[1]))


def evaluate(config: RuleConfig, buffer: ObservationBuffer, threshold: float, uniforms=None) -> StopDecision:
    """Windowed statistic with the maximizing window (smallest on ties)."""
    lengths, values = window_statistics(config, buffer, uniforms)
    j = int(np.argmax(values))
    stat = float(values[j])
    return StopDecision(statistic=stat, stopped=stat >= threshold, best_window=lengths[j])


@dataclass
class MeiState:
    """Per-stream CUSUM scores, all starting at zero."""

    cusum: np.ndarray

    @classmethod
    def zeros(cls, num_streams: int) -> "MeiState":
        return cls(np.zeros(num_streams))


def mei_step(state: MeiState, x, delta0: float) -> float:
    """Advance every CUSUM by one observation; returns their sum."""
    x = np.asarray(x, dtype=float)
    if x.shape != state.cusum.shape:
        raise ValueError("observation length does not match the state")
    np.maximum(state.cusum + delta0 * x - 0.5 * delta0 * delta0, 0.0, out=state.cusum)
    return float(np.cumsum(state.cusum)[-1])


def mei_eps_statistic(state: MeiState, epsilon0: float, lambda_m: float) -> float:
    """Sum of detectability-transformed CUSUM scores."""
    y = 0.5 * state.cusum
    terms = y + np.log(epsilon0 * lambda_m + (1.0 - epsilon0) * np.exp(-y))
    return float(np.cumsum(terms)[-1])


def run_rule(config: RuleConfig, threshold: float, source: Iterable, horizon: int) -> RunResult:
    """Drive a rule over ``source`` until it stops or ``horizon`` steps pass.

    ``source`` yields observation vectors, or ``(x, uniforms)`` pairs for
    discrete SL. Running out of data before the horizon raises; reaching the
    horizon without a stop is reported as censored.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    buffer = None
    state = None
    if config.kind.windowed:
        buffer = ObservationBuffer(config.num_streams, config.windows.max_length)
    else:
        state = MeiState.zeros(config.num_streams)
    it = iter(source)
    stat = -math.inf
    running_max = -math.inf
    for t in range(1, horizon + 1):
        try:
            item = next(it)
        except StopIteration:
            raise RuntimeError(f"data source exhausted at t={t} before horizon {horizon}") from None
        uniforms = None
        if config.null is not None:
            item, uniforms = item
        if buffer is not None:
            buffer.push(item)
            stat = evaluate(config, buffer, threshold, uniforms).statistic
        else:
            total = mei_step(state, item, config.delta0)
            if config.kind is RuleKind.MEI_EPS:
                total = mei_eps_statistic(state, config.epsilon0, config.lambda_m)
            stat = total
        running_max = max(running_max, stat)
        if stat >= threshold:
            return RunResult(t, False, stat, running_max)
    return RunResult(horizon, True, stat, running_max)
