"""Cone-pruned lattice sweeps shared by the polymer and heat recursions.

A sweep applies, for j = 0..n_steps-1,

    new[y] = w_j(y) * sum_{z ~ y} prev[z]          (linear domain)
    new[y] = log w_j(y) + logsumexp_{z ~ y} prev[z] (log domain)

on a dense flat box, touching only the sites scheduled for step j.  The
weight is exp(beta*xi(tau_j, y) - c) for polymer sweeps and exp(-c) for
heat sweeps.  Each step's site set is stored as rows along the last axis
(contiguous runs, stride 1 or 2), which keeps neighbour reads cache-local
and lets the spatial hash of a site be finished from a per-row prefix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from . import _rng
from .noise import Environment, ZERO, _apply_map

FORWARD, BACKWARD = "forward", "backward"


@dataclass(frozen=True, eq=False)
class Geometry:
    """Dense box of half-width H around ``center`` plus a step schedule.

    Step j covers rows ``rstart[j] .. rstart[j] + rcount[j] - 1``; row r is
    the run of ``row_len[r]`` sites starting at flat index ``row_flat[r]``
    with flat stride ``row_stride[r]`` along the last axis.
    """

    kind: str
    d: int
    H: int
    radius: int
    center: tuple
    lims: np.ndarray
    row_flat: np.ndarray
    row_len: np.ndarray
    row_stride: np.ndarray
    row_key: np.ndarray
    row_last: np.ndarray
    rstart: np.ndarray
    rcount: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.lims.shape[0]

    @property
    def shape(self):
        return (2 * self.H + 1,) * self.d

    @property
    def size(self):
        return (2 * self.H + 1) ** self.d

    @property
    def strides(self):
        n = 2 * self.H + 1
        return np.array([n ** (self.d - 1 - a) for a in range(self.d)], dtype=np.int64)

    def flat_index(self, x) -> int:
        off = np.asarray(x, dtype=np.int64) - np.asarray(self.center, dtype=np.int64) + self.H
        if np.any(off < 0) or np.any(off > 2 * self.H):
            return -1
        return int(np.dot(off, self.strides))

    def flat_coords(self, flat: np.ndarray) -> np.ndarray:
        idx = np.stack(np.unravel_index(flat, self.shape), axis=1)
        return idx - self.H + np.asarray(self.center, dtype=np.int64)

    def distance(self, x) -> int:
        off = np.abs(np.asarray(x, dtype=np.int64) - np.asarray(self.center, dtype=np.int64))
        if self.kind == FORWARD:
            return int(np.maximum(off - self.radius, 0).sum())
        return int(off.sum())

    def contains(self, j: int, x) -> bool:
        lim = int(self.lims[j])
        dist = self.distance(x)
        if self.kind == BACKWARD and (dist - lim) % 2:
            return False
        return dist <= lim

    def step_sites(self, j: int) -> np.ndarray:
        rows = slice(self.rstart[j], self.rstart[j] + self.rcount[j])
        lens = self.row_len[rows]
        base = np.repeat(self.row_flat[rows], lens)
        stride = np.repeat(self.row_stride[rows], lens)
        first = np.repeat(np.cumsum(lens) - lens, lens)
        return base + stride * (np.arange(lens.sum()) - first)


def _offsets(d, H):
    n = 2 * H + 1
    return np.indices((n,) * d, dtype=np.int64).reshape(d, -1).T - H


@nb.njit(cache=True)
def _prefix_keys(prefix):
    n, k = prefix.shape
    out = np.empty(n, dtype=np.uint64)
    for r in range(n):
        h = _rng._K_SPACE
        for i in range(k):
            h = _rng.mix64(h ^ (np.uint64(prefix[r, i]) + np.uint64(i + 1) * _rng.GOLDEN))
        out[r] = h
    return out


def _build(kind, d, H, radius, center, lims, clip=None):
    center = tuple(int(c) for c in center)
    cvec = np.asarray(center, dtype=np.int64)
    n = 2 * H + 1
    prefix = _offsets(d - 1, H)
    if clip is not None:
        prefix = prefix[np.all(np.abs(prefix) <= clip, axis=1)]
    if kind == FORWARD:
        pd = np.maximum(np.abs(prefix) - radius, 0).sum(axis=1)
    else:
        pd = np.abs(prefix).sum(axis=1)
    keys = _prefix_keys(np.ascontiguousarray(prefix + cvec[:-1]))
    pflat = ((prefix + H) * (n ** np.arange(d - 1, 0, -1, dtype=np.int64))).sum(axis=1)
    parts = {k: [] for k in ("flat", "len", "stride", "key", "last")}
    rstart, rcount = [], []
    total = 0
    for lim in lims:
        budget = lim - pd
        sel = np.flatnonzero(budget >= 0)
        b = budget[sel]
        if kind == FORWARD:
            half = radius + b if clip is None else np.minimum(radius + b, clip)
            length, stride = 2 * half + 1, np.ones_like(b)
        else:
            half = b
            length, stride = b + 1, np.full_like(b, 2)
        parts["flat"].append(pflat[sel] + (H - half))
        parts["len"].append(length)
        parts["stride"].append(stride)
        parts["key"].append(keys[sel])
        parts["last"].append(cvec[-1] - half)
        rstart.append(total)
        rcount.append(sel.size)
        total += sel.size
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
    return Geometry(kind, d, H, radius, center, np.asarray(lims, dtype=np.int64),
                    cat["flat"].astype(np.int64), cat["len"].astype(np.int64),
                    cat["stride"].astype(np.int64), cat["key"].astype(np.uint64),
                    cat["last"].astype(np.int64),
                    np.asarray(rstart, dtype=np.int64), np.asarray(rcount, dtype=np.int64))


@lru_cache(maxsize=8)
def forward_geometry(d: int, center: tuple, radius: int, t: int, clip: int | None = None) -> Geometry:
    """Sites needed to evaluate t forward steps exactly on the cube |y - center|_inf <= radius.

    Step s (1-based) touches the sites within L1 distance t - s of the cube
    (distance to a cube: sum over axes of max(0, |offset| - radius)).
    With ``clip`` the schedule is cut to |y - center|_inf <= clip and the box
    gets a zero ghost layer; results are then no longer exact.
    """
    lims = [t - s for s in range(1, t + 1)]
    if clip is not None and clip < radius + t:
        if clip < radius:
            raise ValueError("clip must cover the target cube")
        return _build(FORWARD, d, clip + 1, radius, center, lims, clip)
    return _build(FORWARD, d, radius + t, radius, center, lims)


def forward_distance(d: int, H: int, radius: int) -> np.ndarray:
    off = _offsets(d, H)
    return np.maximum(np.abs(off) - radius, 0).sum(axis=1)


@lru_cache(maxsize=8)
def backward_geometry(d: int, center: tuple, t: int) -> Geometry:
    """Octahedral schedule for a point-to-line sweep of depth t from ``center``.

    Depth k (1-based, step k-1) touches sites with |y - center|_1 <= k - 1
    and |y - center|_1 = k - 1 mod 2.
    """
    return _build(BACKWARD, d, max(t, 1), 0, center, [k - 1 for k in range(1, t + 1)])


def noise_params(env: Environment | None):
    if env is None:
        return np.uint64(0), 2, 0, 0.0, 0.0, np.zeros(0), np.zeros(0)
    kind, a, b, grid, vals = env.law.kernel_params()
    mode = 1 if env.mode == ZERO else 0
    return np.uint64(env.seed), mode, kind, a, b, grid, vals


def bump_arrays(env: Environment | None, geo: Geometry, times: np.ndarray, first: int = 0):
    """Bumps that land on scheduled sites, as (step index, flat index, amount).

    Step indices are relative to ``first``, the geometry step the sweep starts at.
    """
    steps, flats, amts = [], [], []
    if env is not None:
        for bt, bx, amount in env.bumps:
            flat = geo.flat_index(bx)
            if flat < 0:
                continue
            for j, tau in enumerate(times):
                if tau == bt and geo.contains(first + j, bx):
                    steps.append(j)
                    flats.append(flat)
                    amts.append(amount)
    return (np.asarray(steps, dtype=np.int64), np.asarray(flats, dtype=np.int64),
            np.asarray(amts, dtype=np.float64))


@nb.njit(inline="always", cache=True)
def _log_weight(tkey, hk, xl, lastmul, mode, kind, a, b, grid, vals, beta, c):
    if mode != 0:
        return -c
    skey = _rng.mix64(hk ^ (np.uint64(xl) + lastmul))
    z = _rng.norm_ppf(_rng.site_uniform(tkey, skey))
    return beta * _apply_map(z, kind, a, b, grid, vals) - c


@nb.njit(cache=True, nogil=True, error_model="numpy")
def sweep_linear(prev, new, row_flat, row_len, row_stride, row_key, row_last, rstart, rcount,
                 times, strides, d, seed, mode, kind, a, b, grid, vals, beta, c,
                 bump_step, bump_flat, bump_amt):
    """Linear-domain sweep; returns (final buffer index 0/1, log offset).

    True values are buffer * exp(log offset).  Each step is scaled by the
    reciprocal maximum of the previous one.  A negative index signals
    underflow or overflow.  mode: 0 random noise, 1 zero noise, 2 no noise.
    """
    logoff = 0.0
    scale = 1.0
    cur = 0
    lastmul = np.uint64(d) * _rng.GOLDEN
    ew = np.exp(-c)
    for j in range(rstart.shape[0]):
        if cur == 0:
            src, dst = prev, new
        else:
            src, dst = new, prev
        tkey = _rng.time_key(seed, times[j])
        logoff -= np.log(scale)
        mx = 0.0
        for r in range(rstart[j], rstart[j] + rcount[j]):
            i = row_flat[r]
            st = row_stride[r]
            xl = row_last[r]
            hk = row_key[r]
            for _ in range(row_len[r]):
                acc = 0.0
                for ax in range(d):
                    s = strides[ax]
                    acc += src[i + s] + src[i - s]
                if mode == 0:
                    w = np.exp(_log_weight(tkey, hk, xl, lastmul, mode, kind, a, b, grid, vals, beta, c))
                else:
                    w = ew
                v = w * acc * scale
                dst[i] = v
                if v > mx:
                    mx = v
                i += st
                xl += st
        for q in range(bump_step.shape[0]):
            if bump_step[q] == j:
                dst[bump_flat[q]] *= np.exp(beta * bump_amt[q])
                if dst[bump_flat[q]] > mx:
                    mx = dst[bump_flat[q]]
        if not (mx > 0.0 and mx < np.inf):
            return -1, logoff
        scale = 1.0 / mx
        cur = 1 - cur
    return cur, logoff


@nb.njit(cache=True, nogil=True, error_model="numpy")
def sweep_log(prev, new, row_flat, row_len, row_stride, row_key, row_last, rstart, rcount,
              times, strides, d, seed, mode, kind, a, b, grid, vals, beta, c,
              bump_step, bump_flat, bump_amt):
    """Log-domain sweep with per-site max subtraction; returns the final buffer index."""
    cur = 0
    lastmul = np.uint64(d) * _rng.GOLDEN
    nb2 = 2 * d
    tmp = np.empty(nb2)
    for j in range(rstart.shape[0]):
        if cur == 0:
            src, dst = prev, new
        else:
            src, dst = new, prev
        tkey = _rng.time_key(seed, times[j])
        for r in range(rstart[j], rstart[j] + rcount[j]):
            i = row_flat[r]
            st = row_stride[r]
            xl = row_last[r]
            hk = row_key[r]
            for _ in range(row_len[r]):
                mx = -np.inf
                for ax in range(d):
                    s = strides[ax]
                    tmp[2 * ax] = src[i + s]
                    tmp[2 * ax + 1] = src[i - s]
                for k in range(nb2):
                    if tmp[k] > mx:
                        mx = tmp[k]
                if mx == -np.inf:
                    dst[i] = -np.inf
                else:
                    acc = 0.0
                    for k in range(nb2):
                        acc += np.exp(tmp[k] - mx)
                    dst[i] = (_log_weight(tkey, hk, xl, lastmul, mode, kind, a, b, grid, vals, beta, c)
                              + mx + np.log(acc))
                i += st
                xl += st
        for q in range(bump_step.shape[0]):
            if bump_step[q] == j:
                dst[bump_flat[q]] += beta * bump_amt[q]
        cur = 1 - cur
    return cur


def run(geo: Geometry, prev: np.ndarray, new: np.ndarray, times: np.ndarray,
        env: Environment | None, beta: float, c: float, first: int = 0, log: bool = False):
    """Sweep geometry steps first..first+len(times)-1.

    Returns (final buffer, log offset) in linear mode, with None for the
    buffer on under/overflow; in log mode the offset is 0.
    """
    seed, mode, kind, a, b, grid, vals = noise_params(env)
    bstep, bflat, bamt = bump_arrays(env, geo, times, first)
    sl = slice(first, first + len(times))
    base = np.asarray(times if env is None else env.base_time(np.asarray(times)), dtype=np.int64)
    args = (prev, new, geo.row_flat, geo.row_len, geo.row_stride, geo.row_key, geo.row_last,
            geo.rstart[sl], geo.rcount[sl], base, geo.strides, geo.d,
            seed, mode, kind, float(a), float(b), grid, vals, float(beta), float(c), bstep, bflat, bamt)
    if log:
        cur = sweep_log(*args)
        return (prev, new)[cur], 0.0
    cur, logoff = sweep_linear(*args)
    if cur < 0:
        return None, logoff
    return (prev, new)[cur], logoff
