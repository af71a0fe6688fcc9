"""Data generators for the normal, Poisson and binomial stream models.

Every trial draws from its own generators, derived from
``SeedSequence(master_seed, spawn_key=(trial_index, purpose))``. No global
RNG is touched, so a trial's trajectory depends only on
``(master_seed, trial_index)`` and never on scheduling.

Draws are made sequentially in step-major order, so generating ``a + b``
steps in one block yields exactly the concatenation of an ``a``-step block
and a ``b``-step block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .pvalue import DiscreteNullSpec

__all__ = [
    "NormalShift",
    "PoissonShift",
    "BinomialShift",
    "BernoulliSubset",
    "FixedSubset",
    "ChangeScenario",
    "SeededSource",
    "draw_subset",
    "affected_mask",
    "generate_block",
    "generate_step",
    "trial_stream",
]

_OBSERVATIONS = 0
_UNIFORMS = 1
_SUBSET = 2


@dataclass(frozen=True)
class NormalShift:
    """N(0, 1) before the change, N(delta, 1) after."""

    delta: float = 1.0
    name = "normal"

    def null_spec(self) -> None:
        return None


@dataclass(frozen=True)
class PoissonShift:
    """Poisson(pre_mean) before the change, Poisson(post_mean) after."""

    pre_mean: float = 0.015
    post_mean: float = 0.3
    name = "poisson"

    def __post_init__(self) -> None:
        if not (self.pre_mean >= 0.0 and self.post_mean >= 0.0):
            raise ValueError("poisson means must be non-negative")

    def null_spec(self) -> DiscreteNullSpec:
        return DiscreteNullSpec.poisson(self.pre_mean)


@dataclass(frozen=True)
class BinomialShift:
    """Binomial(trials, pre_prob) before the change, Binomial(trials, post_prob) after."""

    trials: int = 5
    pre_prob: float = 0.001
    post_prob: float = 0.05
    name = "binomial"

    def __post_init__(self) -> None:
        if self.trials < 1 or not (0.0 < self.pre_prob < 1.0 and 0.0 < self.post_prob < 1.0):
            raise ValueError("binomial model needs trials >= 1 and probabilities in (0, 1)")

    def null_spec(self) -> DiscreteNullSpec:
        return DiscreteNullSpec.binomial(self.trials, self.pre_prob)


Family = Union[NormalShift, PoissonShift, BinomialShift]


@dataclass(frozen=True)
class BernoulliSubset:
    """Each stream is affected independently with probability ``epsilon``."""

    epsilon: float

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class FixedSubset:
    """A fixed set of affected streams (0-based indices)."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("affected subset must be non-empty")
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise ValueError("subset indices must be unique and non-negative")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def first(cls, size: int) -> "FixedSubset":
        return cls(tuple(range(size)))

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ChangeScenario:
    """Change time (``math.inf`` for no change), affected streams and model."""

    change_time: float = math.inf
    subset: BernoulliSubset | FixedSubset | None = None
    family: Family = NormalShift()

    def __post_init__(self) -> None:
        nu = self.change_time
        if not (nu == math.inf or (nu >= 1 and int(nu) == nu)):
            raise ValueError(f"change_time must be a positive integer or inf, got {nu}")
        if nu != math.inf and self.subset is None:
            raise ValueError("a change needs an affected subset")

    @classmethod
    def null(cls, family: Family | None = None) -> "ChangeScenario":
        return cls(math.inf, None, family if family is not None else NormalShift())

    @classmethod
    def immediate(cls, subset_size: int, family: Family | None = None) -> "ChangeScenario":
        """Change at t = 1 in streams ``0..subset_size-1``."""
        return cls(1, FixedSubset.first(subset_size), family if family is not None else NormalShift())

    @property
    def subset_size(self) -> int | None:
        if isinstance(self.subset, FixedSubset):
            return self.subset.size
        return None

    def validate_for(self, num_streams: int) -> None:
        if isinstance(self.subset, FixedSubset) and self.subset.indices[-1] >= num_streams:
            raise ValueError(f"subset index {self.subset.indices[-1]} out of range for N={num_streams}")


@dataclass(frozen=True)
class SeededSource:
    """Per-trial seed provenance."""

    master_seed: int
    trial_index: int

    def _seq(self, purpose: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.trial_index, purpose))

    def observation_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq(_OBSERVATIONS)))

    def uniform_bitgen(self) -> np.random.PCG64:
        return np.random.PCG64(self._seq(_UNIFORMS))

    def subset_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seq(_SUBSET)))


def draw_subset(rng: np.random.Generator, num_streams: int, epsilon: float) -> np.ndarray:
    """Indices of streams included independently with probability ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return np.flatnonzero(rng.random(num_streams) < epsilon)


def affected_mask(scenario: ChangeScenario, num_streams: int, source: SeededSource) -> np.ndarray:
    mask = np.zeros(num_streams, dtype=bool)
    if scenario.change_time == math.inf:
        return mask
    scenario.validate_for(num_streams)
    if isinstance(scenario.subset, FixedSubset):
        mask[list(scenario.subset.indices)] = True
    else:
        mask[draw_subset(source.subset_rng(), num_streams, scenario.subset.epsilon)] = True
    return mask


def generate_block(scenario: ChangeScenario, rng: np.random.Generator, mask: np.ndarray,
                   t_start: int, steps: int) -> np.ndarray:
    """Observations for times ``t_start .. t_start + steps - 1`` (1-based)."""
    n = mask.size
    times = np.arange(t_start, t_start + steps)[:, None]
    post = (times >= scenario.change_time) & mask[None, :]
    fam = scenario.family
    if isinstance(fam, NormalShift):
        x = rng.standard_normal((steps, n))
        if post.any():
            x += fam.delta * post
        return x
    if isinstance(fam, PoissonShift):
        lam = np.where(post, fam.post_mean, fam.pre_mean)
        return rng.poisson(lam).astype(float)
    prob = np.where(post, fam.post_prob, fam.pre_prob)
    return rng.binomial(fam.trials, prob).astype(float)


def generate_step(scenario: ChangeScenario, rng: np.random.Generator, mask: np.ndarray, t: int) -> np.ndarray:
    """Observation vector at time ``t``."""
    return generate_block(scenario, rng, mask, t, 1)[0]


def trial_stream(scenario: ChangeScenario, source: SeededSource, num_streams: int,
                 uniforms_per_step: int = 0) -> Iterator:
    """Infinite per-step data of one trial, identical to what the compiled
    harness consumes. With ``uniforms_per_step = J * N`` it yields
    ``(x, u)`` with ``u`` shaped ``(J, N)``."""
    rng = source.observation_rng()
    mask = affected_mask(scenario, num_streams, source)
    ugen = np.random.Generator(source.uniform_bitgen()) if uniforms_per_step else None
    t = 0
    while True:
        t += 1
        x = generate_step(scenario, rng, mask, t)
        if ugen is None:
            yield x
        else:
            u = ugen.random(uniforms_per_step).reshape(-1, num_streams)
            yield x, u
