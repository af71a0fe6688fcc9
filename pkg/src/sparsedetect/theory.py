"""Detection-boundary constants and asymptotic delay bounds.

Regimes are indexed by the sparsity exponent ``beta`` (affected fraction
``~ N**-beta``) and the ARL exponent ``zeta`` (``log gamma ~ N**zeta``):

* dense,    ``beta < (1 - zeta)/2``: delay tends to 1;
* moderate, ``(1 - zeta)/2 < beta < 1 - zeta``: delay ~ ``2 rho_Z / delta^2 * log N``;
* extreme,  ``beta > 1 - zeta`` with V affected streams:
  delay ~ ``2 / (delta^2 V) * N**zeta``.

Boundary values of ``beta`` are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "Regime",
    "RegimeParams",
    "classify_regime",
    "rho_z",
    "delay_lower_bound",
    "asymptotic_delay",
    "threshold_upper_bound",
]


class Regime(str, Enum):
    DENSE = "dense"
    MODERATE = "moderate"
    EXTREME = "extreme"


@dataclass(frozen=True)
class RegimeParams:
    beta: float
    zeta: float
    delta: float = 1.0
    num_streams: int = 100
    subset_size: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in (0, 1], got {self.zeta}")
        if self.delta == 0.0 or not math.isfinite(self.delta):
            raise ValueError("delta must be finite and non-zero")
        if self.num_streams < 2:
            raise ValueError("num_streams must be >= 2")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be positive")


def classify_regime(beta: float, zeta: float) -> Regime:
    lower = 0.5 * (1.0 - zeta)
    upper = 1.0 - zeta
    if beta == lower or beta == upper:
        raise ValueError(f"beta = {beta} lies on a regime boundary for zeta = {zeta}")
    if beta < lower:
        return Regime.DENSE
    if beta < upper:
        return Regime.MODERATE
    return Regime.EXTREME


def rho_z(beta: float, zeta: float) -> float:
    """Detection-boundary constant for ``(1-zeta)/2 < beta <= 1-zeta``.

    ``zeta = 0`` gives the one-dimensional sparse-mixture constant.
    """
    if not 0.0 <= zeta < 1.0:
        raise ValueError(f"zeta must lie in [0, 1), got {zeta}")
    a = 1.0 - zeta
    if not 0.5 * a < beta <= a:
        raise ValueError(f"beta = {beta} outside ((1-zeta)/2, 1-zeta] for zeta = {zeta}")
    if beta <= 0.75 * a:
        return beta - 0.5 * a
    return (math.sqrt(a) - math.sqrt(a - beta)) ** 2


def _regime_value(params: RegimeParams, regime: Regime) -> float:
    scale = 2.0 / params.delta**2
    if regime is Regime.MODERATE:
        return scale * rho_z(params.beta, params.zeta) * math.log(params.num_streams)
    if params.subset_size is None:
        raise ValueError("the extreme-sparsity bound needs subset_size")
    return scale / params.subset_size * params.num_streams**params.zeta


def delay_lower_bound(params: RegimeParams, regime: Regime | str | None = None) -> float:
    """Asymptotic lower bound on the detection delay of any rule with
    ARL >= gamma (moderate or extreme regime)."""
    actual = classify_regime(params.beta, params.zeta)
    regime = actual if regime is None else Regime(regime)
    if regime is not actual:
        raise ValueError(f"parameters lie in the {actual.value} regime, not {regime.value}")
    if regime is Regime.DENSE:
        raise ValueError("no lower bound beyond 1 is stated for the dense regime")
    return _regime_value(params, regime)


def asymptotic_delay(params: RegimeParams, regime: Regime | str | None = None) -> float:
    """Limiting delay of the sparsity-likelihood rule: 1 in the dense regime,
    otherwise equal to :func:`delay_lower_bound`."""
    actual = classify_regime(params.beta, params.zeta)
    regime = actual if regime is None else Regime(regime)
    if regime is not actual:
        raise ValueError(f"parameters lie in the {actual.value} regime, not {regime.value}")
    if regime is Regime.DENSE:
        return 1.0
    return _regime_value(params, regime)


def threshold_upper_bound(gamma: float) -> float:
    """``log(4 gamma^2 + 2 gamma)``: a sparsity-likelihood threshold this
    large already guarantees ARL >= gamma."""
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return math.log(4.0 * gamma * gamma + 2.0 * gamma)
