"""Compiled inner loops for the Monte Carlo harness.

Each kernel consumes a block of observation vectors, advances the ring
buffer (or CUSUM state) one step at a time, evaluates the detection
statistic, and records every new running maximum as ``(t, value)``. It stops
early on the first step whose statistic reaches ``threshold``.

Windowed per-stream terms that depend on the data only through a z-score are
read from piecewise-cubic tables (4-point Lagrange cells, absolute error
~1e-10); arguments outside the table fall back to exact evaluation. The
sparsity-likelihood score of a p-value is tabulated per binary exponent of p
so no logarithm is needed in the common case.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .windows import ring_push

P_FLOOR = 1e-300
SQRT2 = math.sqrt(2.0)

# per-stream term kinds
TERM_SL_TWO_SIDED = 0
TERM_SL_ONE_SIDED = 1
TERM_XS = 2
TERM_MODIFIED_MLR = 3

# argument transforms applied to z before the table lookup
MODE_IDENTITY = 0
MODE_ABS = 1
MODE_POSITIVE = 2

CUSUM_SUM = 0
CUSUM_DETECTABILITY = 1

_PATTERNS = {
    "first": np.array([0.0, 1.0, 2.0, 3.0]),
    "interior": np.array([-1.0, 0.0, 1.0, 2.0]),
    "last": np.array([-2.0, -1.0, 0.0, 1.0]),
}


def _cell_coefficients(values: np.ndarray) -> np.ndarray:
    """Horner coefficients (c0..c3 in the local coordinate f in [0, 1]) of
    the cubic through four neighbouring nodes for every cell between
    consecutive nodes. Stencils are shifted inward at the two ends so only
    nodes inside the domain are used."""
    m = values.size - 1
    if m < 3:
        raise ValueError("need at least 4 nodes")
    inv = {k: np.linalg.inv(np.vander(d, 4, increasing=True)) for k, d in _PATTERNS.items()}
    coef = np.empty((m, 4))
    idx = np.arange(m)
    interior = (idx >= 1) & (idx <= m - 2)
    ii = idx[interior]
    stencil = np.stack([values[ii - 1], values[ii], values[ii + 1], values[ii + 2]], axis=1)
    coef[interior] = stencil @ inv["interior"].T
    coef[0] = inv["first"] @ values[0:4]
    coef[m - 1] = inv["last"] @ values[m - 3 : m + 1]
    return coef


def build_cubic_table(func, lo: float, hi: float, step: float) -> tuple[np.ndarray, float, float]:
    """Tabulate a smooth vectorized ``func`` on ``[lo, hi]``.

    Returns ``(coef, lo, inv_step)`` for :func:`table_eval`.
    """
    ncell = int(round((hi - lo) / step))
    nodes = lo + step * np.arange(ncell + 1)
    coef = _cell_coefficients(np.asarray(func(nodes), dtype=float))
    return np.ascontiguousarray(coef), float(lo), 1.0 / step


def build_binade_table(func, num_binades: int = 64, cells: int = 128) -> np.ndarray:
    """Tabulate ``func(p)`` for ``p`` in ``[2**-num_binades, 1]``.

    Row ``e`` covers ``p = m * 2**-e`` with ``m`` in ``[0.5, 1]``.
    """
    coef = np.empty((num_binades, cells, 4))
    m = 0.5 + 0.5 * np.arange(cells + 1) / cells
    for e in range(num_binades):
        coef[e] = _cell_coefficients(np.asarray(func(np.ldexp(m, -e)), dtype=float))
    return coef


@njit(cache=True, inline="always")
def table_eval(coef, x):
    i = int(x)
    f = x - i
    return coef[i, 0] + f * (coef[i, 1] + f * (coef[i, 2] + f * coef[i, 3]))


@njit(cache=True)
def sl_score_exact(p, w1, w2):
    """Per-stream sparsity-likelihood score of a (clamped) p-value."""
    if p < P_FLOOR:
        p = P_FLOOR
    elif p > 1.0:
        p = 1.0
    lp = math.log(p)
    return math.log1p(w1 * (1.0 / (p * (2.0 - lp) ** 2) - 0.5) + w2 * (1.0 / math.sqrt(p) - 2.0))


@njit(cache=True)
def term_exact(kind, z, kp):
    """Exact per-stream term for window z-score ``z``.

    ``kp`` holds ``(w1, w2, epsilon0, lam)``; entries unused by ``kind`` are
    ignored.
    """
    if kind == TERM_SL_TWO_SIDED:
        return sl_score_exact(math.erfc(abs(z) / SQRT2), kp[0], kp[1])
    if kind == TERM_SL_ONE_SIDED:
        return sl_score_exact(0.5 * math.erfc(z / SQRT2), kp[0], kp[1])
    zp = z if z > 0.0 else 0.0
    eps = kp[2]
    if kind == TERM_XS:
        y = 0.5 * zp * zp
        return y + math.log(eps + (1.0 - eps) * math.exp(-y))
    y = 0.25 * zp * zp
    return y + math.log(eps * kp[3] + (1.0 - eps) * math.exp(-y))


@njit(cache=True, inline="always")
def binade_eval(coef, p):
    """Table lookup of a function of ``p`` in (0, 1]; returns NaN when ``p``
    lies below the covered binades."""
    nb = coef.shape[0]
    cells = coef.shape[1]
    e = 0
    lim = 0.5
    scale = 1.0
    while p < lim:
        e += 1
        if e == nb:
            return np.nan
        lim *= 0.5
        scale *= 2.0
    x = (p * scale - 0.5) * (2 * cells)
    i = int(x)
    if i >= cells:
        i = cells - 1
    f = x - i
    # index the 3-D table directly; taking coef[e] would build an array view per call
    return coef[e, i, 0] + f * (coef[e, i, 1] + f * (coef[e, i, 2] + f * coef[e, i, 3]))


@njit(cache=True)
def _record(stat, t, best, rec_t, rec_v, nrec):
    if stat > best:
        rec_t[nrec] = t
        rec_v[nrec] = stat
        return stat, nrec + 1
    return best, nrec


@njit(cache=True)
def windowed_normal_run(
    prefix, obs, t, xblock, nsteps, lengths, inv_sqrt, coef, lo, inv_step,
    mode, kind, kp, threshold, best, rec_t, rec_v,
):
    """Advance a windowed z-score rule by up to ``nsteps`` observations.

    Returns ``(t, steps_done, n_records, best, stopped)``.
    """
    rp = prefix.shape[0]
    n_streams = prefix.shape[1]
    ncell = coef.shape[0]
    nrec = 0
    stopped = False
    done = 0
    for b in range(nsteps):
        t = ring_push(prefix, obs, t, xblock[b])
        done = b + 1
        stat = -np.inf
        r0 = t % rp
        for j in range(lengths.size):
            k = lengths[j]
            if k > t:
                break
            r1 = (t - k) % rp
            sc = inv_sqrt[j]
            tot = 0.0
            for n in range(n_streams):
                z = (prefix[r0, n] - prefix[r1, n]) * sc
                if mode == MODE_ABS:
                    zt = abs(z)
                elif mode == MODE_POSITIVE:
                    zt = z if z > 0.0 else 0.0
                else:
                    zt = z
                x = (zt - lo) * inv_step
                if x >= 0.0 and x < ncell:
                    tot += table_eval(coef, x)
                else:
                    tot += term_exact(kind, z, kp)
            if tot > stat:
                stat = tot
        best, nrec = _record(stat, t, best, rec_t, rec_v, nrec)
        if stat >= threshold:
            stopped = True
            break
    return t, done, nrec, best, stopped


@njit(cache=True)
def windowed_discrete_run(
    prefix, obs, t, xblock, ublock, nsteps, lengths, lo_tab, pmf_tab, up_tab,
    score_coef, dense_coef, dense_lo, dense_inv, w1, w2, threshold, best, rec_t, rec_v,
):
    """Sparsity-likelihood rule on counts with randomized two-sided p-values.

    ``ublock[b, j, n]`` is the auxiliary uniform for stream ``n``, window
    ``j`` at step ``b``; ``*_tab[j, s]`` are the null tails of a window sum
    ``s`` over ``lengths[j]`` observations. Scores of ``p >= dense_lo`` come
    from a uniform-grid table (the common case under the null, with a
    predictable branch); smaller p use the per-binade table.
    """
    rp = prefix.shape[0]
    n_streams = prefix.shape[1]
    width = lo_tab.shape[1]
    ndense = dense_coef.shape[0]
    nrec = 0
    stopped = False
    done = 0
    for b in range(nsteps):
        t = ring_push(prefix, obs, t, xblock[b])
        done = b + 1
        stat = -np.inf
        r0 = t % rp
        for j in range(lengths.size):
            k = lengths[j]
            if k > t:
                break
            r1 = (t - k) % rp
            tot = 0.0
            for n in range(n_streams):
                s = int(prefix[r0, n] - prefix[r1, n] + 0.5)
                if s < width:
                    u = ublock[b, j, n]
                    pm = pmf_tab[j, s]
                    phi = lo_tab[j, s] + u * pm
                    comp = up_tab[j, s] + (1.0 - u) * pm
                    p = 2.0 * min(phi, comp)
                    if p > 1.0:
                        p = 1.0
                else:
                    p = P_FLOOR
                if p >= dense_lo:
                    x = (p - dense_lo) * dense_inv
                    i = int(x)
                    if i >= ndense:
                        i = ndense - 1
                    f = x - i
                    v = dense_coef[i, 0] + f * (dense_coef[i, 1] + f * (dense_coef[i, 2] + f * dense_coef[i, 3]))
                else:
                    v = binade_eval(score_coef, p)
                    if v != v:
                        v = sl_score_exact(p, w1, w2)
                tot += v
            if tot > stat:
                stat = tot
        best, nrec = _record(stat, t, best, rec_t, rec_v, nrec)
        if stat >= threshold:
            stopped = True
            break
    return t, done, nrec, best, stopped


@njit(cache=True)
def detectability(x, eps, lam):
    """``log(1 + eps * (lam * exp(x/2) - 1))`` without overflow for large x."""
    y = 0.5 * x
    return y + math.log(eps * lam + (1.0 - eps) * math.exp(-y))


@njit(cache=True)
def cusum_run(cusum, t, xblock, nsteps, delta0, kind, eps, lam, threshold, best, rec_t, rec_v):
    """Sum-of-CUSUM rules: plain sum (``CUSUM_SUM``) or sum of
    detectability-transformed scores (``CUSUM_DETECTABILITY``)."""
    n_streams = cusum.size
    drift = 0.5 * delta0 * delta0
    nrec = 0
    stopped = False
    done = 0
    for b in range(nsteps):
        t += 1
        done = b + 1
        stat = 0.0
        for n in range(n_streams):
            r = cusum[n] + delta0 * xblock[b, n] - drift
            if r < 0.0:
                r = 0.0
            cusum[n] = r
            if kind == CUSUM_SUM:
                stat += r
            else:
                stat += detectability(r, eps, lam)
        best, nrec = _record(stat, t, best, rec_t, rec_v, nrec)
        if stat >= threshold:
            stopped = True
            break
    return t, done, nrec, best, stopped
