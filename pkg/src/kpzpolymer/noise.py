"""Noise laws (Lipschitz images of a standard Gaussian) and the environment field."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from scipy import integrate

from . import _rng
from .errors import ConfigError, EstimationError

GAUSSIAN = "standard-gaussian"
AFFINE = "affine-gaussian"
LIPSCHITZ_MAP = "lipschitz-map"

_KIND_CODE = {GAUSSIAN: 0, AFFINE: 0, LIPSCHITZ_MAP: 1}
_MGF_RTOL = 1e-10
BETA0_TOL = 1e-9
BETA0_CAP = 64.0


@dataclass(frozen=True)
class NoiseLaw:
    """Law of xi = T(Z) with Z standard Gaussian and T Lipschitz.

    ``affine-gaussian`` is T(z) = scale*z + shift.  ``lipschitz-map`` is the
    piecewise-linear interpolant of a monotone table, extended linearly with
    the end slopes outside the grid.
    """

    kind: str = GAUSSIAN
    scale: float = 1.0
    shift: float = 0.0
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ConfigError(f"unknown noise law kind {self.kind!r}")
        if self.kind == GAUSSIAN and (self.scale != 1.0 or self.shift != 0.0):
            raise ConfigError("standard-gaussian takes no scale/shift")
        if self.kind == LIPSCHITZ_MAP:
            g = np.asarray(self.grid, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if g.ndim != 1 or g.shape != v.shape or g.size < 2:
                raise ConfigError("lipschitz-map needs matching grid/values of length >= 2")
            if np.any(np.diff(g) <= 0):
                raise ConfigError("lipschitz-map grid must be strictly increasing")
            if np.any(np.diff(v) < 0):
                raise ConfigError("lipschitz-map values must be monotone non-decreasing")
            if not np.all(np.isfinite(v)):
                raise ConfigError("lipschitz-map values must be finite")
        elif self.scale <= 0:
            raise ConfigError("affine-gaussian scale must be positive")
        if not self.lipschitz_constant > 0:
            raise ConfigError("noise map must have a positive Lipschitz constant")

    @classmethod
    def standard(cls) -> "NoiseLaw":
        return cls()

    @classmethod
    def affine(cls, scale: float, shift: float) -> "NoiseLaw":
        return cls(kind=AFFINE, scale=float(scale), shift=float(shift))

    @classmethod
    def tabulated(cls, grid: Sequence[float], values: Sequence[float]) -> "NoiseLaw":
        return cls(kind=LIPSCHITZ_MAP, grid=tuple(map(float, grid)),
                   values=tuple(map(float, values)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "NoiseLaw":
        """Two-column CSV (grid point, mapped value); a header row is allowed."""
        grid, values = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    a, b = float(row[0]), float(row[1])
                except ValueError:
                    if not grid:
                        continue  # header
                    raise ConfigError(f"bad row in {path}: {row}") from None
                grid.append(a)
                values.append(b)
        return cls.tabulated(grid, values)

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == LIPSCHITZ_MAP:
            slopes = np.diff(self.values) / np.diff(self.grid)
            return float(np.max(np.abs(slopes)))
        return abs(self.scale)

    def transform(self, z):
        """Apply the defining map to standard-Gaussian draws."""
        z = np.asarray(z, dtype=float)
        if self.kind == LIPSCHITZ_MAP:
            return _interp_extrap(z, np.asarray(self.grid), np.asarray(self.values))
        return self.scale * z + self.shift

    def kernel_params(self):
        """(kind code, scale, shift, grid, values) for the jitted samplers."""
        return (_KIND_CODE[self.kind], float(self.scale), float(self.shift),
                np.asarray(self.grid, dtype=np.float64), np.asarray(self.values, dtype=np.float64))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == AFFINE:
            out.update(scale=self.scale, shift=self.shift)
        elif self.kind == LIPSCHITZ_MAP:
            out.update(grid=list(self.grid), values=list(self.values))
        return out

    @classmethod
    def from_dict(cls, data: dict | str) -> "NoiseLaw":
        if isinstance(data, str):
            data = {"kind": data}
        kind = data.get("kind", GAUSSIAN)
        if kind == AFFINE:
            return cls.affine(data.get("scale", 1.0), data.get("shift", 0.0))
        if kind == LIPSCHITZ_MAP:
            if "table" in data:
                return cls.from_csv(data["table"])
            return cls.tabulated(data["grid"], data["values"])
        return cls(kind=kind)


def _interp_extrap(z, grid, values):
    out = np.interp(z, grid, values)
    lo_slope = (values[1] - values[0]) / (grid[1] - grid[0])
    hi_slope = (values[-1] - values[-2]) / (grid[-1] - grid[-2])
    out = np.where(z < grid[0], values[0] + lo_slope * (z - grid[0]), out)
    return np.where(z > grid[-1], values[-1] + hi_slope * (z - grid[-1]), out)


def mgf_quadrature(law: NoiseLaw, beta: float) -> float:
    """E exp(beta*T(Z)) by adaptive quadrature against the Gaussian density."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0:
        return 1.0
    # Break points: law knots plus the shifted Gaussian peak for affine maps.
    knots = sorted(set(law.grid) | {beta * law.lipschitz_constant})
    knots = [k for k in knots if abs(k) < 40.0]

    def integrand(z):
        return math.exp(beta * float(law.transform(z)) - 0.5 * z * z) / math.sqrt(2 * math.pi)

    edges = [-math.inf] + knots + [math.inf]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, abserr, *info = integrate.quad(integrand, lo, hi, epsabs=0.0,
                                            epsrel=_MGF_RTOL * 0.1, limit=200,
                                            full_output=1)
        if len(info) > 1:
            raise EstimationError(f"mgf quadrature failed on [{lo}, {hi}]: {info[1]}")
        total += val
        err += abserr
    if not math.isfinite(total) or total <= 0 or err > _MGF_RTOL * total:
        raise EstimationError(
            f"mgf quadrature did not converge at beta={beta}: value={total}, abserr={err}")
    return total


def mgf(law: NoiseLaw, beta: float) -> float:
    """Moment generating function m(beta) = E exp(beta*xi)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if law.kind == LIPSCHITZ_MAP:
        return mgf_quadrature(law, beta)
    return math.exp(beta * law.shift + 0.5 * (beta * law.scale) ** 2)


def log_mgf(law: NoiseLaw, beta: float) -> float:
    if law.kind == LIPSCHITZ_MAP:
        return math.log(mgf_quadrature(law, beta))
    return beta * law.shift + 0.5 * (beta * law.scale) ** 2


def mu(law: NoiseLaw, beta: float) -> float:
    """m(2 beta) / m(beta)^2, always >= 1."""
    return math.exp(log_mgf(law, 2 * beta) - 2 * log_mgf(law, beta))


def beta0(law: NoiseLaw, rho_d: float, cap: float = BETA0_CAP, tol: float = BETA0_TOL) -> float:
    """Supremum of beta with mu(beta) < 1/rho_d; ``math.inf`` beyond ``cap``."""
    if not 0 < rho_d < 1:
        raise ValueError("rho_d must lie in (0, 1)")
    target = -math.log(rho_d)

    def excess(b):
        return math.log(mu(law, b)) - target

    hi = 1.0
    while excess(hi) < 0:
        if hi >= cap:
            return math.inf
        hi = min(2 * hi, cap)
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- environment -----------------------------------------------------------

RANDOM = "random"
ZERO = "zero"


@dataclass(frozen=True)
class Environment:
    """Reproducible i.i.d. noise xi(t, x) keyed by (seed, t, x).

    ``mode="zero"`` is the all-zero debug field.  ``bumps`` holds
    ``(t, x, amount)`` triples added on top of whatever the mode produces.
    ``reflect=T > 0`` reads the underlying field at time T + 1 - t, an
    equal-in-law relabelling that lets runs with different horizons T share
    the noise nearest to their final time.
    """

    seed: int
    law: NoiseLaw = field(default_factory=NoiseLaw)
    mode: str = RANDOM
    bumps: tuple = ()
    reflect: int = 0

    def __post_init__(self):
        if self.mode not in (RANDOM, ZERO):
            raise ConfigError(f"unknown environment mode {self.mode!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.reflect < 0:
            raise ConfigError("reflect must be >= 0")

    def base_time(self, t):
        """Time index into the underlying hashed field (array-friendly)."""
        if self.reflect:
            if np.any(np.asarray(t) > self.reflect):
                raise ConfigError(f"time {t} exceeds the reflection horizon {self.reflect}")
            return self.reflect + 1 - t
        return t

    def reflected(self, T: int) -> "Environment":
        return Environment(self.seed, self.law, self.mode, self.bumps, int(T))

    def with_bump(self, t: int, x: Sequence[int], amount: float) -> "Environment":
        bump = (int(t), tuple(int(v) for v in x), float(amount))
        return Environment(self.seed, self.law, self.mode, self.bumps + (bump,), self.reflect)

    def bump_delta(self, t: int, x) -> float:
        key = tuple(int(v) for v in x)
        return sum(a for (bt, bx, a) in self.bumps if bt == t and bx == key)


@nb.njit(cache=True)
def _fill_noise(tkey, skeys, out, kind, scale, shift, grid, values):
    n = skeys.shape[0]
    for i in range(n):
        z = _rng.norm_ppf(_rng.site_uniform(tkey, skeys[i]))
        out[i] = _apply_map(z, kind, scale, shift, grid, values)


@nb.njit(inline="always", cache=True)
def _apply_map(z, kind, scale, shift, grid, values):
    if kind == 0:
        return scale * z + shift
    m = grid.shape[0]
    if z <= grid[0]:
        return values[0] + (values[1] - values[0]) / (grid[1] - grid[0]) * (z - grid[0])
    if z >= grid[m - 1]:
        return values[m - 1] + (values[m - 1] - values[m - 2]) / (grid[m - 1] - grid[m - 2]) * (z - grid[m - 1])
    j = np.searchsorted(grid, z) - 1
    w = (z - grid[j]) / (grid[j + 1] - grid[j])
    return values[j] + w * (values[j + 1] - values[j])


@nb.njit(cache=True)
def space_keys(coords):
    n = coords.shape[0]
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _rng.space_key(coords[i])
    return out


def noise_values(env: Environment, t: int, skeys: np.ndarray, coords: np.ndarray | None = None,
                 out: np.ndarray | None = None) -> np.ndarray:
    """xi(t, .) at sites given by precomputed space keys (and coords for bumps)."""
    if t < 1:
        raise ValueError("noise is indexed by t >= 1")
    n = skeys.shape[0]
    if out is None:
        out = np.empty(n, dtype=np.float64)
    else:
        out = out[:n]
    if env.mode == ZERO:
        out[:] = 0.0
    else:
        kind, a, b, grid, vals = env.law.kernel_params()
        _fill_noise(np.uint64(_rng.time_key(np.uint64(env.seed), int(env.base_time(t)))), skeys, out, kind, a, b, grid, vals)
    if env.bumps:
        if coords is None:
            raise ValueError("bumped environments need site coordinates")
        for bt, bx, amount in env.bumps:
            if bt != t:
                continue
            hit = np.all(coords[:n] == np.asarray(bx), axis=1)
            out[hit] += amount
    return out


def xi_field(env: Environment, t: int, coords) -> np.ndarray:
    """xi(t, x) for every row x of an integer (n, d) array."""
    coords = np.ascontiguousarray(np.atleast_2d(coords), dtype=np.int64)
    return noise_values(env, t, space_keys(coords), coords)


def xi(env: Environment, t: int, x: Sequence[int]) -> float:
    """Single noise value xi(t, x)."""
    return float(xi_field(env, t, np.asarray(x, dtype=np.int64)[None, :])[0])
