"""Sparse multi-stream change detection.

Sparsity-likelihood (SL) scoring of p-values, windowed and CUSUM-based
stopping rules, and a seeded Monte Carlo harness for ARL calibration and
detection-delay estimation.
"""

from __future__ import annotations

from .models import (
    BernoulliSubset,
    BinomialShift,
    ChangeScenario,
    FixedSubset,
    NormalShift,
    PoissonShift,
    SeededSource,
)
from .montecarlo import (
    ArlEstimate,
    CalibrationError,
    CalibrationResult,
    DelayResult,
    calibrate_threshold,
    estimate_arl,
    estimate_delay,
    null_tail_check,
)
from .pvalue import DiscreteNullSpec, discrete_pvalue, normal_one_sided, normal_two_sided
from .rules import RuleConfig, RuleKind, run_rule
from .score import SparsityParams, aggregate_score, default_lambda2, f1, f2, stream_score
from .theory import RegimeParams, asymptotic_delay, delay_lower_bound, rho_z, threshold_upper_bound
from .windows import ObservationBuffer, WindowSet, build_window_set

__version__ = "0.1.0"

__all__ = [
    "ArlEstimate",
    "BernoulliSubset",
    "BinomialShift",
    "CalibrationError",
    "CalibrationResult",
    "ChangeScenario",
    "DelayResult",
    "DiscreteNullSpec",
    "FixedSubset",
    "NormalShift",
    "ObservationBuffer",
    "PoissonShift",
    "RegimeParams",
    "RuleConfig",
    "RuleKind",
    "SeededSource",
    "SparsityParams",
    "WindowSet",
    "aggregate_score",
    "asymptotic_delay",
    "build_window_set",
    "calibrate_threshold",
    "default_lambda2",
    "delay_lower_bound",
    "discrete_pvalue",
    "estimate_arl",
    "estimate_delay",
    "f1",
    "f2",
    "normal_one_sided",
    "normal_two_sided",
    "null_tail_check",
    "rho_z",
    "run_rule",
    "stream_score",
    "threshold_upper_bound",
]
