"""ARL estimation, threshold calibration and detection-delay estimation.

Trials are resumable: a :class:`TrialSimulator` keeps its ring buffer, its
generators and the list of running-maximum records ``(t, value)`` of its
detection statistic. The stopping time at any threshold ``C`` already
passed by the running maximum is read off the records without simulating
again; a higher threshold resumes the trial where it stopped. Calibration
therefore uses common random numbers by construction: every candidate
threshold sees the same per-trial data, ARL is a non-decreasing step
function of the threshold, and bisection on it is deterministic.

Work is spread over ``workers`` processes, each owning a fixed contiguous
block of trial indices. Results are gathered in trial order and depend
only on ``(master_seed, configuration)``, never on the worker count.
"""

from __future__ import annotations

import bisect
import functools
import logging
import math
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .models import ChangeScenario, Family, NormalShift, SeededSource, affected_mask, generate_block
from .pvalue import discrete_tails
from .rules import MLR_LAMBDA, RuleConfig, RuleKind, stream_terms
from .score import SparsityParams, aggregate_score, stream_score
from .theory import threshold_upper_bound

__all__ = [
    "CalibrationError",
    "ArlEstimate",
    "CalibrationResult",
    "DelayResult",
    "CompiledRule",
    "compile_rule",
    "TrialSimulator",
    "TrialPool",
    "estimate_arl",
    "calibrate_threshold",
    "estimate_delay",
    "null_tail_check",
]

log = logging.getLogger(__name__)

DEFAULT_TRIALS = 500
DELAY_HORIZON = 10_000
_MAX_BLOCK = 64
_FIRST_BLOCK = 4

_TABLE_STEP = 1.0 / 128.0
_TABLE_Z_MAX = 10.0
_ONE_SIDED_Z_MIN = -9.0
_DENSE_P_MIN = 1.0 / 32.0
_DENSE_P_STEP = 2.0**-13


class CalibrationError(RuntimeError):
    """Calibration could not produce an accepted threshold."""


@dataclass(frozen=True)
class ArlEstimate:
    threshold: float
    arl: float
    std_error: float
    trials: int
    censored_count: int
    horizon: int
    master_seed: int


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    estimated_arl: float
    trials: int
    std_error: float
    master_seed: int
    censored_count: int
    target_gamma: float
    tolerance: float
    history: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class DelayResult:
    rule: str
    subset_size: int | None
    mean_delay: float
    std_error: float
    trials: int
    censored_count: int
    threshold: float
    master_seed: int


# compiled rules ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompiledRule:
    """Kernel-ready arrays for one rule configuration."""

    engine: str  # "normal", "discrete" or "cusum"
    lengths: np.ndarray | None = None
    inv_sqrt: np.ndarray | None = None
    coef: np.ndarray | None = None
    lo: float = 0.0
    inv_step: float = 1.0
    mode: int = 0
    term: int = 0
    kp: np.ndarray | None = None
    lo_tab: np.ndarray | None = None
    pmf_tab: np.ndarray | None = None
    up_tab: np.ndarray | None = None
    score_coef: np.ndarray | None = None
    dense_coef: np.ndarray | None = None
    dense_lo: float = 1.0
    dense_inv: float = 1.0
    cusum_kind: int = 0

    def table_term(self, z: np.ndarray) -> np.ndarray:
        """Evaluate the tabulated per-stream term the way the kernel does."""
        z = np.asarray(z, dtype=float)
        if self.mode == kernels.MODE_ABS:
            zt = np.abs(z)
        elif self.mode == kernels.MODE_POSITIVE:
            zt = np.maximum(z, 0.0)
        else:
            zt = z
        x = (zt - self.lo) * self.inv_step
        inside = (x >= 0) & (x < self.coef.shape[0])
        out = np.empty_like(z)
        xi = x[inside]
        i = xi.astype(np.int64)
        f = xi - i
        c = self.coef[i]
        out[inside] = c[:, 0] + f * (c[:, 1] + f * (c[:, 2] + f * c[:, 3]))
        out[~inside] = [kernels.term_exact(self.term, v, self.kp) for v in z[~inside]]
        return out


_TERM_CODES = {
    RuleKind.SL_TWO_SIDED: (kernels.TERM_SL_TWO_SIDED, kernels.MODE_ABS, 0.0),
    RuleKind.SL_ONE_SIDED: (kernels.TERM_SL_ONE_SIDED, kernels.MODE_IDENTITY, _ONE_SIDED_Z_MIN),
    RuleKind.XS: (kernels.TERM_XS, kernels.MODE_POSITIVE, 0.0),
    RuleKind.MODIFIED_MLR: (kernels.TERM_MODIFIED_MLR, kernels.MODE_POSITIVE, 0.0),
}


def _discrete_tables(rule: RuleConfig, lengths: np.ndarray):
    tails = [discrete_tails(rule.null.for_window(int(k))) for k in lengths]
    width = 1
    for lo, pmf, up in tails:
        live = np.flatnonzero((pmf > 0.0) | (up > 0.0))
        if live.size:
            width = max(width, int(live[-1]) + 1)
    lo_tab = np.ones((lengths.size, width))
    pmf_tab = np.zeros((lengths.size, width))
    up_tab = np.zeros((lengths.size, width))
    for j, (lo, pmf, up) in enumerate(tails):
        m = min(width, lo.size)
        lo_tab[j, :m] = lo[:m]
        pmf_tab[j, :m] = pmf[:m]
        up_tab[j, :m] = up[:m]
    return lo_tab, pmf_tab, up_tab


@functools.lru_cache(maxsize=64)
def compile_rule(rule: RuleConfig) -> CompiledRule:
    """Build lookup tables and kernel parameters for ``rule`` (cached)."""
    if not rule.kind.windowed:
        cusum_kind = kernels.CUSUM_SUM if rule.kind is RuleKind.MEI else kernels.CUSUM_DETECTABILITY
        return CompiledRule("cusum", cusum_kind=cusum_kind)
    lengths = rule.windows.as_array()
    if rule.null is not None:
        params = rule.sparsity
        lo_tab, pmf_tab, up_tab = _discrete_tables(rule, lengths)
        score = functools.partial(stream_score, params)
        score_coef = kernels.build_binade_table(score)
        dense_coef, dense_lo, dense_inv = kernels.build_cubic_table(score, _DENSE_P_MIN, 1.0, _DENSE_P_STEP)
        kp = np.array([params.weight1, params.weight2, 0.0, 0.0])
        return CompiledRule("discrete", lengths=lengths, kp=kp, lo_tab=lo_tab, pmf_tab=pmf_tab,
                            up_tab=up_tab, score_coef=score_coef, dense_coef=dense_coef,
                            dense_lo=dense_lo, dense_inv=dense_inv)
    term, mode, zmin = _TERM_CODES[rule.kind]
    coef, lo, inv_step = kernels.build_cubic_table(
        lambda z: stream_terms(rule, z), zmin, _TABLE_Z_MAX, _TABLE_STEP
    )
    sp = rule.sparsity
    kp = np.array([
        sp.weight1 if sp else 0.0,
        sp.weight2 if sp else 0.0,
        rule.epsilon0 or 0.0,
        MLR_LAMBDA if rule.kind is RuleKind.MODIFIED_MLR else 0.0,
    ])
    return CompiledRule("normal", lengths=lengths, inv_sqrt=1.0 / np.sqrt(lengths), coef=coef,
                        lo=lo, inv_step=inv_step, mode=mode, term=term, kp=kp)


# trials --------------------------------------------------------------------


class TrialSimulator:
    """One resumable Monte Carlo trial of ``rule`` under ``scenario``."""

    def __init__(self, rule: RuleConfig, scenario: ChangeScenario, source: SeededSource):
        if scenario.family.null_spec() != rule.null:
            raise ValueError(
                f"rule {rule.label} does not match the {scenario.family.name} data model"
            )
        self.rule = rule
        self.scenario = scenario
        self.source = source
        self.compiled = compile_rule(rule)
        n = rule.num_streams
        self.time = 0
        self.best = -math.inf
        self.record_times: list[int] = []
        self.record_values: list[float] = []
        self._rng = source.observation_rng()
        self._mask = affected_mask(scenario, n, source)
        self._pending = np.empty((0, n))
        self._block = _FIRST_BLOCK
        engine = self.compiled.engine
        if engine == "cusum":
            self._cusum = np.zeros(n)
        else:
            cap = int(self.compiled.lengths[-1])
            self._prefix = np.zeros((cap + 1, n))
            self._obs = np.zeros((cap, n))
        if engine == "discrete":
            self._ubits = source.uniform_bitgen()
            self._ugen = np.random.Generator(self._ubits)
            self._u_per_step = self.compiled.lengths.size * n

    def _take(self, steps: int) -> np.ndarray:
        if len(self._pending):
            block = self._pending[:steps]
            self._pending = self._pending[steps:]
            return block
        return generate_block(self.scenario, self._rng, self._mask, self.time + 1, steps)

    def _run_block(self, steps: int, threshold: float):
        c = self.compiled
        xb = self._take(steps)
        steps = xb.shape[0]
        rec_t = np.empty(steps, dtype=np.int64)
        rec_v = np.empty(steps)
        if c.engine == "normal":
            out = kernels.windowed_normal_run(
                self._prefix, self._obs, self.time, xb, steps, c.lengths, c.inv_sqrt, c.coef,
                c.lo, c.inv_step, c.mode, c.term, c.kp, threshold, self.best, rec_t, rec_v,
            )
        elif c.engine == "discrete":
            state = self._ubits.state
            ub = self._ugen.random(steps * self._u_per_step).reshape(steps, c.lengths.size, -1)
            out = kernels.windowed_discrete_run(
                self._prefix, self._obs, self.time, xb, ub, steps, c.lengths, c.lo_tab,
                c.pmf_tab, c.up_tab, c.score_coef, c.dense_coef, c.dense_lo, c.dense_inv,
                c.kp[0], c.kp[1], threshold, self.best,
                rec_t, rec_v,
            )
            if out[1] < steps:
                # rewind so the unused uniforms are drawn again for the pending steps
                self._ubits.state = state
                self._ubits.advance(out[1] * self._u_per_step)
        else:
            r = self.rule
            out = kernels.cusum_run(
                self._cusum, self.time, xb, steps, r.delta0, c.cusum_kind, r.epsilon0 or 1.0,
                r.lambda_m or 1.0, threshold, self.best, rec_t, rec_v,
            )
        t, done, nrec, best, stopped = out
        if done < steps:
            self._pending = np.concatenate([xb[done:], self._pending])
        self.time = int(t)
        self.best = float(best)
        self.record_times.extend(rec_t[:nrec].tolist())
        self.record_values.extend(rec_v[:nrec].tolist())
        return stopped

    def extend(self, threshold: float, limit: int) -> None:
        """Simulate until the statistic reaches ``threshold`` or time ``limit``."""
        while self.time < limit and not (self.record_values and self.best >= threshold):
            steps = min(self._block, limit - self.time)
            if self._run_block(steps, threshold):
                break
            self._block = min(2 * self._block, _MAX_BLOCK)

    def stopping_time(self, threshold: float) -> int | None:
        """First time the statistic reached ``threshold``, if it has so far."""
        i = bisect.bisect_left(self.record_values, threshold)
        if i == len(self.record_values):
            return None
        return self.record_times[i]


def _make_trials(rule, scenario, master_seed, indices):
    return [TrialSimulator(rule, scenario, SeededSource(master_seed, int(i))) for i in indices]


def _extend_all(trials, threshold, limit):
    times = np.empty(len(trials), dtype=np.int64)
    stops = np.zeros(len(trials), dtype=np.int64)
    for i, tr in enumerate(trials):
        tr.extend(threshold, limit)
        times[i] = tr.time
        st = tr.stopping_time(threshold)
        stops[i] = 0 if st is None else st
    return times, stops


def _worker_main(conn, rule, scenario, master_seed, indices):
    trials = _make_trials(rule, scenario, master_seed, indices)
    while True:
        msg = conn.recv()
        if msg[0] == "close":
            conn.close()
            return
        try:
            conn.send(("ok", _extend_all(trials, msg[1], msg[2])))
        except Exception as exc:  # report to the parent instead of hanging it
            conn.send(("error", repr(exc)))


class TrialPool:
    """``trials`` resumable trials spread over ``workers`` processes."""

    def __init__(self, rule: RuleConfig, scenario: ChangeScenario, *, trials: int,
                 master_seed: int, workers: int = 1):
        if trials < 1:
            raise ValueError("trials must be >= 1")
        scenario.validate_for(rule.num_streams)
        self.rule = rule
        self.scenario = scenario
        self.trials = int(trials)
        self.master_seed = int(master_seed)
        self.workers = max(1, min(int(workers), self.trials))
        self._local = None
        self._procs = []
        self._conns = []
        chunks = np.array_split(np.arange(self.trials), self.workers)
        if self.workers == 1:
            self._local = _make_trials(rule, scenario, self.master_seed, chunks[0])
            return
        compile_rule(rule)  # build tables once before forking
        ctx = mp.get_context("fork")
        for chunk in chunks:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker_main,
                               args=(child, rule, scenario, self.master_seed, chunk), daemon=True)
            proc.start()
            child.close()
            self._procs.append(proc)
            self._conns.append(parent)

    def extend(self, threshold: float, limit: int) -> tuple[np.ndarray, np.ndarray]:
        """Extend every trial; returns per-trial ``(time, stop_time or 0)``."""
        if self._local is not None:
            return _extend_all(self._local, threshold, limit)
        for conn in self._conns:
            conn.send(("extend", float(threshold), int(limit)))
        times, stops = [], []
        for conn in self._conns:
            status, payload = conn.recv()
            if status != "ok":
                raise RuntimeError(f"worker failed: {payload}")
            times.append(payload[0])
            stops.append(payload[1])
        return np.concatenate(times), np.concatenate(stops)

    def arl(self, threshold: float, horizon: int) -> ArlEstimate:
        """ARL estimate at ``threshold``, censoring trials at ``horizon``."""
        _, stops = self.extend(threshold, horizon)
        censored = stops == 0
        run_lengths = np.where(censored, horizon, stops)
        mean, se = _mean_and_se(run_lengths)
        return ArlEstimate(float(threshold), mean, se, self.trials, int(censored.sum()), int(horizon),
                           self.master_seed)

    def close(self) -> None:
        for conn in self._conns:
            try:
                conn.send(("close",))
                conn.close()
            except (BrokenPipeError, OSError):
                pass
        for proc in self._procs:
            proc.join(timeout=5)
        self._conns, self._procs = [], []

    def __enter__(self) -> "TrialPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# estimators ----------------------------------------------------------------


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = float(np.cumsum(values)[-1] / values.size)
    if values.size < 2:
        return mean, math.nan
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))


def estimate_arl(rule: RuleConfig, threshold: float, *, family: Family | None = None,
                 trials: int = DEFAULT_TRIALS, horizon: int = 150_000, master_seed: int = 0,
                 workers: int = 1) -> ArlEstimate:
    """Mean run length with no change over ``trials`` seeded trials.

    Trials still running at ``horizon`` count as ``horizon`` (biased low) and
    are reported in ``censored_count``.
    """
    scenario = ChangeScenario.null(family if family is not None else NormalShift())
    with TrialPool(rule, scenario, trials=trials, master_seed=master_seed, workers=workers) as pool:
        return pool.arl(threshold, horizon)


def _classify(pool: TrialPool, threshold: float, gamma: float, tolerance: float, horizon: int):
    """Compare ARL(threshold) with the band ``gamma * (1 +- tolerance)``.

    Returns ``(sign, estimate)``: sign is +1 above the band, -1 below, 0
    inside. Above-band decisions use the lower bound ``mean(min(T_i, t_i))``
    so trials are only simulated as long as needed.
    """
    upper = gamma * (1.0 + tolerance)
    limit = min(horizon, int(math.ceil(upper * 1.02)) + 1)
    while True:
        times, stops = pool.extend(threshold, limit)
        resolved = stops > 0
        bound = float(np.where(resolved, stops, times).mean())
        if bound > upper:
            return 1, None
        if resolved.all() or limit >= horizon:
            est = pool.arl(threshold, horizon)
            if est.arl > upper:
                return 1, est
            if est.arl < gamma * (1.0 - tolerance):
                if est.censored_count:
                    raise CalibrationError(
                        f"ARL {est.arl:.1f} below the band with {est.censored_count} trials "
                        f"censored at horizon {horizon}; raise the horizon"
                    )
                return -1, est
            return 0, est
        limit = min(horizon, int(limit * 1.5))


def calibrate_threshold(rule: RuleConfig, target_gamma: float, *, family: Family | None = None,
                        trials: int = DEFAULT_TRIALS, tolerance: float = 0.05,
                        master_seed: int = 0, bracket: tuple[float, float] | None = None,
                        horizon: int | None = None, workers: int = 1,
                        max_iter: int = 60, pool: TrialPool | None = None) -> CalibrationResult:
    """Bisect the threshold until the estimated ARL falls in
    ``target_gamma * (1 +- tolerance)``.

    The default bracket for SL rules is ``[0, log(4 gamma^2 + 2 gamma)]``;
    other rules start from ``[0, 1]`` and widen it until it brackets.
    Raises :class:`CalibrationError` when the bracket fails, the band cannot
    be hit, or the accepted estimate has censored trials.

    Passing an open null-scenario ``pool`` for ``rule`` reuses its trials
    (``family``, ``trials``, ``master_seed`` and ``workers`` are then taken
    from the pool), so further ARL estimates on the same pool share common
    random numbers with the calibration.
    """
    if not target_gamma > 1.0:
        raise ValueError("target_gamma must exceed 1")
    if horizon is None:
        horizon = int(30 * target_gamma)
    scenario = ChangeScenario.null(family if family is not None else NormalShift())
    if pool is not None:
        if pool.rule != rule or pool.scenario.change_time != math.inf:
            raise ValueError("pool must hold null-scenario trials of the same rule")
        return _bisect(pool, rule, target_gamma, tolerance, bracket, horizon, max_iter)
    with TrialPool(rule, scenario, trials=trials, master_seed=master_seed, workers=workers) as own:
        return _bisect(own, rule, target_gamma, tolerance, bracket, horizon, max_iter)


def _bisect(pool, rule, target_gamma, tolerance, bracket, horizon, max_iter) -> CalibrationResult:
    history = []
    master_seed = pool.master_seed

    def result(threshold, est):
        if est.censored_count:
            raise CalibrationError(
                f"{est.censored_count} of {est.trials} trials censored at horizon {horizon}"
            )
        return CalibrationResult(float(threshold), est.arl, est.trials, est.std_error,
                                 int(master_seed), est.censored_count, float(target_gamma),
                                 float(tolerance), tuple(history))

    def probe(c):
        sign, est = _classify(pool, c, target_gamma, tolerance, horizon)
        history.append((c, sign, None if est is None else est.arl))
        log.info("%s: threshold %.5f -> %+d (ARL %s)", rule.label, c, sign,
                 "n/a" if est is None else f"{est.arl:.1f}")
        return sign, est

    if bracket is None:
        explicit = False
        lo, hi = 0.0, (threshold_upper_bound(target_gamma) if rule.kind.is_sl else 1.0)
    else:
        explicit = True
        lo, hi = map(float, bracket)
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")

    sign, est = probe(lo)
    if sign == 0:
        return result(lo, est)
    width = max(hi - lo, 1.0)
    expansions = 0
    while sign > 0:
        expansions += 1
        if explicit or expansions > max_iter:
            raise CalibrationError(f"lower bracket end {lo} already gives ARL above the band")
        hi, lo = lo, lo - width
        width *= 2
        sign, est = probe(lo)
        if sign == 0:
            return result(lo, est)
    sign, est = probe(hi)
    expansions = 0
    while sign < 0:
        expansions += 1
        if explicit or expansions > max_iter:
            raise CalibrationError(f"upper bracket end {hi} still gives ARL below the band")
        lo, hi = hi, hi + width
        width *= 2
        sign, est = probe(hi)
    if sign == 0:
        return result(hi, est)

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        sign, est = probe(mid)
        if sign == 0:
            return result(mid, est)
        if sign > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9:
            break
    raise CalibrationError(
        f"ARL jumps across the band {target_gamma:g} +- {100 * tolerance:g}% near {lo:.6f}"
    )


def estimate_delay(rule: RuleConfig, threshold: float, scenario: ChangeScenario, *,
                   trials: int = DEFAULT_TRIALS, master_seed: int = 0,
                   horizon: int = DELAY_HORIZON, workers: int = 1) -> DelayResult:
    """Mean of ``T - nu + 1`` over trials with the change at ``nu = 1``.

    Censored trials count as ``horizon`` and are reported.
    """
    if scenario.change_time != 1:
        raise ValueError("delay estimation expects the change at time 1")
    with TrialPool(rule, scenario, trials=trials, master_seed=master_seed, workers=workers) as pool:
        _, stops = pool.extend(threshold, horizon)
    censored = stops == 0
    delays = np.where(censored, horizon, stops)
    mean, se = _mean_and_se(delays)
    if censored.any():
        log.warning("%s: %d delay trials censored at %d", rule.label, int(censored.sum()), horizon)
    return DelayResult(rule.label, scenario.subset_size, mean, se, int(trials), int(censored.sum()),
                       float(threshold), int(master_seed))


def null_tail_check(params: SparsityParams, threshold: float, trials: int, *,
                    master_seed: int = 0, chunk: int = 10_000) -> float:
    """Fraction of i.i.d. Uniform(0, 1) p-value vectors whose aggregate score
    reaches ``threshold``; at most ``exp(-threshold)`` in expectation."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(0xA11,)))
    hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        # 1 - U lies in (0, 1]
        p = 1.0 - rng.random((m, params.num_streams))
        hits += int(np.count_nonzero(np.asarray(aggregate_score(params, p)) >= threshold))
        done += m
    return hits / trials
