"""Simple symmetric random walks on Z^d: return probability, pair intersections, collision probability.

Walks far from their target are advanced by exact leaps: a walk (or walk
pair) at L1 distance l from the target cannot reach it in fewer than l
(resp. l/2) steps, so that many steps are drawn at once as a multinomial
axis split with fair-coin signs.  The sampled law is exactly that of the
step-by-step walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numba as nb
import numpy as np
from scipy import special

from . import _rng
from .errors import ConfigError
from .stats import RunStats, stats

# skip the TBB layer probe (and its version warning) when OpenMP is available
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

LEAP_MIN = 12
_TAG_SINGLE = 0x5157
_TAG_PAIR = 0x9A12
_TAG_CLT = 0x0C17


@dataclass(frozen=True)
class WalkConfig:
    d: int = 3
    T: int = 10_000
    M: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.d < 3:
            raise ConfigError("walk estimates need d >= 3 (transient regime)")
        if self.T < 1 or self.M < 1:
            raise ConfigError("horizon T and replicates M must be >= 1")


@dataclass(frozen=True)
class IntersectionSample:
    N: dict           # horizon -> coincidence count over 0 <= k <= horizon
    hit: bool
    first_meeting: int | None


@dataclass
class IntersectionBatch:
    """Columnar form of many IntersectionSamples."""

    horizons: np.ndarray      # (H,)
    counts: np.ndarray        # (M, H) N at each horizon
    first_meeting: np.ndarray  # (M,), -1 when the walks never met within T

    def __len__(self):
        return self.counts.shape[0]

    def __iter__(self) -> Iterator[IntersectionSample]:
        hs = [int(h) for h in self.horizons]
        for row, fm in zip(self.counts, self.first_meeting):
            yield IntersectionSample(dict(zip(hs, map(int, row))), bool(fm >= 0),
                                     None if fm < 0 else int(fm))

    @property
    def hit(self) -> np.ndarray:
        return self.first_meeting >= 0

    def at(self, horizon: int) -> np.ndarray:
        (idx,) = np.nonzero(self.horizons == horizon)
        if idx.size == 0:
            raise KeyError(horizon)
        return self.counts[:, idx[0]]


@dataclass(frozen=True)
class ReturnEstimate:
    stats: RunStats
    tail_bracket: float       # additive upper bracket for returns after T
    first_return: np.ndarray  # per-walk first return time, 0 = none within T

    @property
    def estimate(self) -> float:
        return self.stats.mean


# -- kernels ---------------------------------------------------------------


@nb.njit(cache=True)
def _leap(state, d, m, disp, counts):
    _rng.multinomial_uniform(state, m, d, counts)
    for a in range(d):
        na = counts[a]
        disp[a] = 2 * _rng.binomial_half(state, na) - na


@nb.njit(cache=True)
def _single_step(state, d, pos):
    k = _rng.bounded(state, 2 * d)
    a = k >> 1
    if k & 1:
        pos[a] -= 1
    else:
        pos[a] += 1


@nb.njit(cache=True)
def _l1(v):
    s = 0
    for a in range(v.shape[0]):
        s += abs(v[a])
    return s


@nb.njit(cache=True, parallel=True)
def _first_returns(seed, d, T, M, leap_min, out):
    base = _rng.derive_seed(seed, _TAG_SINGLE)
    for i in nb.prange(M):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _rng.derive_seed(base, i)
        pos = np.zeros(d, dtype=np.int64)
        disp = np.zeros(d, dtype=np.int64)
        counts = np.zeros(d, dtype=np.int64)
        n = 0
        l1 = 0
        hit = 0
        while n < T:
            if l1 > T - n:
                break
            if l1 >= leap_min:
                m = l1 - 1
                _leap(state, d, m, disp, counts)
                for a in range(d):
                    pos[a] += disp[a]
                n += m
                l1 = _l1(pos)
            else:
                _single_step(state, d, pos)
                n += 1
                l1 = _l1(pos)
                if l1 == 0:
                    hit = n
                    break
        out[i] = hit


@nb.njit(cache=True, parallel=True)
def _pair_walks(seed, d, T, M, offset, horizons, leap_min, stop_at_first, mirrored,
                counts_out, first_out):
    base = _rng.derive_seed(seed, _TAG_PAIR)
    H = horizons.shape[0]
    for i in nb.prange(M):
        sa = np.empty(1, dtype=np.uint64)
        sb = np.empty(1, dtype=np.uint64)
        ka = _rng.derive_seed(base, 2 * i)
        kb = _rng.derive_seed(base, 2 * i + 1)
        if mirrored:
            sa[0] = kb
            sb[0] = ka
        else:
            sa[0] = ka
            sb[0] = kb
        diff = offset.copy()    # S_k - S'_k
        da = np.zeros(d, dtype=np.int64)
        db = np.zeros(d, dtype=np.int64)
        pa = np.zeros(d, dtype=np.int64)
        pb = np.zeros(d, dtype=np.int64)
        counts = np.zeros(d, dtype=np.int64)
        l1 = _l1(diff)
        n = 0
        N = 0
        first = -1
        if l1 == 0:
            N = 1
            first = 0
        h = 0
        while h < H and horizons[h] <= 0:
            counts_out[i, h] = N
            h += 1
        while n < T:
            if l1 > 2 * (T - n):
                break
            if stop_at_first and first >= 0:
                break
            if l1 >= leap_min:
                m = (l1 - 1) // 2
                _leap(sa, d, m, da, counts)
                _leap(sb, d, m, db, counts)
                for a in range(d):
                    diff[a] += da[a] - db[a]
                n += m
                l1 = _l1(diff)
            else:
                for a in range(d):
                    pa[a] = 0
                    pb[a] = 0
                _single_step(sa, d, pa)
                _single_step(sb, d, pb)
                for a in range(d):
                    diff[a] += pa[a] - pb[a]
                n += 1
                l1 = _l1(diff)
                if l1 == 0:
                    N += 1
                    if first < 0:
                        first = n
            while h < H and horizons[h] <= n:
                counts_out[i, h] = N
                h += 1
        while h < H:
            counts_out[i, h] = N
            h += 1
        first_out[i] = first


@nb.njit(cache=True, parallel=True)
def _endpoints(seed, d, n, M, out):
    base = _rng.derive_seed(seed, _TAG_CLT)
    for i in nb.prange(M):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _rng.derive_seed(base, i)
        disp = np.zeros(d, dtype=np.int64)
        counts = np.zeros(d, dtype=np.int64)
        _leap(state, d, n, disp, counts)
        for a in range(d):
            out[i, a] = disp[a]


# -- operations ------------------------------------------------------------


def _tail_bracket(first_return: np.ndarray, d: int, T: int, M: int) -> float:
    """c * sum_{n > T, n even} n^{-d/2}, with c fitted on dyadic bins of first-return times."""
    times = first_return[first_return > 0]
    c = 0.0
    j = 1
    while 2 ** j <= T:
        lo, hi = 2 ** j, min(2 ** (j + 1), T + 1)
        k = np.count_nonzero((times >= lo) & (times < hi))
        if k >= 10:
            evens = np.arange(lo + (lo % 2), hi, 2, dtype=float)
            c = max(c, (k / M) / float(np.sum(evens ** (-d / 2))))
        j += 1
    s = d / 2
    # sum over even n > T is 2^-s * zeta(s, floor(T/2) + 1)
    return float(c * 2.0 ** (-s) * special.zeta(s, T // 2 + 1))


def rho_d(cfg: WalkConfig, leap_min: int = LEAP_MIN) -> ReturnEstimate:
    """Fraction of M walks from the origin that return within T steps."""
    out = np.zeros(cfg.M, dtype=np.int64)
    _first_returns(np.uint64(cfg.seed), cfg.d, cfg.T, cfg.M, leap_min, out)
    hits = (out > 0).astype(float)
    p = float(hits.mean())
    var = p * (1 - p) * cfg.M / (cfg.M - 1) if cfg.M > 1 else 0.0
    rs = RunStats(cfg.M, p, var, math.sqrt(var / cfg.M) if cfg.M > 0 else math.nan)
    return ReturnEstimate(rs, _tail_bracket(out, cfg.d, cfg.T, cfg.M), out)


def sample_intersections(cfg: WalkConfig, start_offset: Sequence[int] | None = None,
                         horizons: Sequence[int] | None = None, stop_at_first: bool = False,
                         mirrored: bool = False, leap_min: int = LEAP_MIN) -> IntersectionBatch:
    """Walk pairs from 0 and ``start_offset``; N_t at each horizon and the first meeting time."""
    offset = np.zeros(cfg.d, dtype=np.int64) if start_offset is None else \
        np.asarray(start_offset, dtype=np.int64)
    if offset.shape != (cfg.d,):
        raise ConfigError(f"offset must have {cfg.d} coordinates")
    hs = np.asarray(sorted(set(horizons or [cfg.T])), dtype=np.int64)
    if hs[0] < 0 or hs[-1] > cfg.T:
        raise ConfigError("horizons must lie in [0, T]")
    counts = np.zeros((cfg.M, hs.size), dtype=np.int64)
    first = np.zeros(cfg.M, dtype=np.int64)
    # walk S starts at 0 and S' at offset, so S - S' starts at -offset
    _pair_walks(np.uint64(cfg.seed), cfg.d, cfg.T, cfg.M, -offset, hs, max(leap_min, 3),
                stop_at_first, mirrored, counts, first)
    return IntersectionBatch(hs, counts, first)


def kappa_hat(cfg: WalkConfig, x: Sequence[int], y: Sequence[int], mirrored: bool = False) -> RunStats:
    """Probability that walks from x and y meet within T (a lower estimate of kappa)."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    batch = sample_intersections(cfg, y - x, [cfg.T], stop_at_first=True, mirrored=mirrored)
    return _indicator_stats(batch.hit)


def _indicator_stats(flags: np.ndarray) -> RunStats:
    n = flags.size
    p = float(np.mean(flags))
    var = p * (1 - p) * n / (n - 1)
    return RunStats(n, p, var, math.sqrt(var / n))


def geometric_pmf(rho: float, kmax: int) -> np.ndarray:
    k = np.arange(1, kmax + 1)
    return rho ** (k - 1) * (1 - rho)


def geometric_tv(counts: np.ndarray, rho: float, kmax: int = 20) -> float:
    """Total variation between the empirical law of counts and Geometric(1 - rho) on {1..kmax}."""
    emp = np.bincount(counts, minlength=kmax + 1)[1:kmax + 1] / counts.size
    return 0.5 * float(np.sum(np.abs(emp - geometric_pmf(rho, kmax))))


@dataclass(frozen=True)
class CltRow:
    n: int
    sup_mass: float
    se: float
    scaled: float   # sup_mass * n^{d/2}


def local_clt_check(cfg: WalkConfig, n_list: Sequence[int]) -> list[CltRow]:
    """Empirical max point mass of S_n, scaled by n^{d/2}."""
    rows = []
    for n in n_list:
        if n <= 0 or n % 2:
            raise ConfigError("local CLT check needs positive even n")
        ends = np.zeros((cfg.M, cfg.d), dtype=np.int64)
        _endpoints(np.uint64(cfg.seed) + np.uint64(n), cfg.d, n, cfg.M, ends)
        _, mult = np.unique(ends, axis=0, return_counts=True)
        p = mult.max() / cfg.M
        rows.append(CltRow(n, float(p), math.sqrt(p * (1 - p) / cfg.M), float(p * n ** (cfg.d / 2))))
    return rows


def mu_power_expectation(cfg: WalkConfig, mu_value: float, t: int) -> RunStats:
    """E[mu^{N}] for two walks started together, counting coincidences at k = 0..t-1.

    This is the pair-path overlap |q ∩ r| of two length-t paths ending at the
    same site (noise is attached to steps 1..t, i.e. reversed times 0..t-1).
    """
    batch = sample_intersections(cfg, None, [t - 1])
    return stats(mu_value ** batch.at(t - 1).astype(float))
