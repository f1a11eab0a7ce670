"""Deterministic limit objects: the walk average G_eps and the Cole-Hopf solution h."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtri
from scipy.stats import qmc

from . import _sweep
from .errors import ConeViolation, ConfigError, EstimationError
from .polymer import CONSTANT, LINEAR, ZERO, InitialCondition

GH_ORDERS = (8, 16, 32, 64, 128)
GH_RTOL = 1e-9
TAIL_TOL = 1e-16


@dataclass(frozen=True)
class KpzParams:
    beta: float
    d: int = 3

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.d < 1:
            raise ConfigError("d must be positive")

    @property
    def nu(self) -> float:
        return 1.0 / (2 * self.d)

    @property
    def lam(self) -> float:
        return self.beta / self.d


# -- G_eps -----------------------------------------------------------------


@dataclass
class HeatSlab:
    """log G_eps(t, .) on the cube |y - center|_inf <= half_width, exact within valid_radius."""

    t: int
    center: np.ndarray
    half_width: int
    valid_radius: int
    log_values: np.ndarray

    @property
    def d(self) -> int:
        return self.log_values.ndim

    def log_G(self, x) -> float:
        off = np.asarray(x, dtype=np.int64) - self.center
        if np.max(np.abs(off)) > self.valid_radius:
            raise ConeViolation(f"site {tuple(x)} lies outside the exact region")
        return float(self.log_values[tuple(off + self.half_width)])


def initial_heat(g: InitialCondition, eps: float, beta: float, center: Sequence[int],
                 half_width: int) -> HeatSlab:
    center = np.asarray(center, dtype=np.int64)
    d = center.shape[0]
    n = 2 * half_width + 1
    idx = np.indices((n,) * d).reshape(d, -1).T - half_width + center
    vals = beta * g.on_lattice(idx, eps).reshape((n,) * d)
    return HeatSlab(0, center, half_width, half_width, vals)


def heat_step(slab: HeatSlab) -> HeatSlab:
    """G(t+1, x) = (1/2d) sum_{y ~ x} G(t, y), in log domain."""
    if slab.valid_radius < 1:
        raise ConeViolation("valid radius exhausted; enlarge the initial box")
    d = slab.d
    v = slab.log_values
    n = v.shape[0]
    neigh = []
    for ax in range(d):
        for sh in (0, 2):
            sl = [slice(1, n - 1)] * d
            sl[ax] = slice(sh, n - 2 + sh)
            neigh.append(v[tuple(sl)])
    stack = np.stack(neigh)
    mx = stack.max(axis=0)
    out = mx + np.log(np.exp(stack - mx).sum(axis=0)) - math.log(2 * d)
    return HeatSlab(slab.t + 1, slab.center, slab.half_width - 1, slab.valid_radius - 1, out)


def truncation_width(g: InitialCondition, eps: float, beta: float, t: int, d: int,
                     tol: float = TAIL_TOL) -> int:
    """Half-width W such that walks leaving |y|_inf <= W carry relative weight below tol.

    Uses Bernstein's inequality per axis (step variance 1/d, steps bounded by 1)
    doubled by the reflection principle, with the exponential tilt of a
    Lipschitz weight absorbed into a shift of the centre.
    """
    var = t / d
    shift = beta * g.lipschitz_constant * eps * var
    W = 1
    while True:
        dev = max(W - shift, 0.0)
        bound = 4 * d * math.exp(-dev * dev / (2 * (var + dev / 3)))
        if bound <= tol or W >= t:
            return W
        W += 1


def heat_cube(g: InitialCondition, eps: float, beta: float, t: int, center: Sequence[int],
              radius: int = 0, clip: int | None = None) -> HeatSlab:
    """log G_eps(t, .) on a cube by the cone-pruned sweep (exact unless ``clip`` truncates)."""
    center = tuple(int(v) for v in center)
    d = len(center)
    if t == 0:
        return initial_heat(g, eps, beta, center, radius)
    geo = _sweep.forward_geometry(d, center, int(radius), int(t), clip)
    coords = geo.flat_coords(np.arange(geo.size))
    init = beta * g.on_lattice(coords, eps)
    top = float(init.max())
    times = np.arange(1, t + 1, dtype=np.int64)
    c = math.log(2 * d)
    R, H = int(radius), geo.H
    cube = (slice(H - R, H + R + 1),) * d
    ghost = _ghost_mask(geo) if clip is not None and geo.H == clip + 1 else None
    prev = np.exp(init - top)
    if ghost is not None:
        prev[ghost] = 0.0
    final, logoff = _sweep.run(geo, prev, np.zeros_like(prev), times, None, beta, c)
    out = None
    if final is not None:
        block = final.reshape(geo.shape)[cube]
        if np.all(block > 1e-250):
            out = np.log(block) + logoff + top
    if out is None:
        start = init.copy()
        if ghost is not None:
            start[ghost] = -np.inf
        final, _ = _sweep.run(geo, start, np.full(geo.size, -np.inf), times, None, beta, c, log=True)
        out = final.reshape(geo.shape)[cube].copy()
    return HeatSlab(int(t), np.asarray(center, dtype=np.int64), R, R, out)


def _ghost_mask(geo):
    """Cells on the outer face of the box (the truncation boundary, held at zero weight)."""
    idx = np.indices(geo.shape).reshape(geo.d, -1)
    return np.any((idx == 0) | (idx == 2 * geo.H), axis=0)


def log_G(g: InitialCondition, eps: float, beta: float, t: int, x: Sequence[int]) -> float:
    """log G_eps(t, x), truncating the walk to a box whose escape mass is below 1e-16."""
    d = len(x)
    if g.kind in (ZERO, CONSTANT):
        return beta * (g.value if g.kind == CONSTANT else 0.0)
    W = truncation_width(g, eps, beta, t, d)
    clip = W if W < t else None
    return heat_cube(g, eps, beta, t, x, 0, clip).log_G(x)


def log_G_linear(a: Sequence[float], eps: float, beta: float, t: int, x: Sequence[int]) -> float:
    """Closed form: log G = beta eps a.x + t log((1/d) sum_j cosh(beta eps a_j))."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(beta * eps * a @ x + t * math.log(np.mean(np.cosh(beta * eps * a))))


def log_G_enumerated(g: InitialCondition, eps: float, beta: float, t: int, x: Sequence[int]) -> float:
    """log G_eps(t, x) from the exact law of S_t (multinomial axis counts, binomial signs)."""
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[0]
    if t > 40:
        raise ConfigError("enumeration oracle is meant for small t")
    probs: dict[tuple, float] = {}
    for counts in _compositions(t, d):
        mult = math.factorial(t)
        for n in counts:
            mult //= math.factorial(n)
        base = mult / (2 * d) ** t
        for plus in itertools.product(*[range(n + 1) for n in counts]):
            y = tuple(2 * k - n for k, n in zip(plus, counts))
            w = base
            for k, n in zip(plus, counts):
                w *= comb(n, k)
            probs[y] = probs.get(y, 0.0) + w
    ys = np.array(list(probs.keys()), dtype=np.int64)
    p = np.array(list(probs.values()))
    e = beta * g.on_lattice(ys + x, eps)
    top = e.max()
    return float(top + math.log(np.dot(p, np.exp(e - top))))


def _compositions(t, d):
    if d == 1:
        yield (t,)
        return
    for k in range(t + 1):
        for rest in _compositions(t - k, d - 1):
            yield (k,) + rest


# -- h ---------------------------------------------------------------------


@dataclass(frozen=True)
class HValue:
    value: float
    method: str       # "closed-form", "gauss-hermite" or "quasi-monte-carlo"
    converged: bool
    order: int = 0
    se: float = 0.0


def cole_hopf_h(params: KpzParams, g: InitialCondition, t: float, x: Sequence[float]) -> float:
    res = cole_hopf_detail(params, g, t, x)
    if not res.converged:
        warnings.warn(f"h({t}, {tuple(x)}) not converged ({res.method}, se={res.se:.2e})", stacklevel=2)
    return res.value


def cole_hopf_detail(params: KpzParams, g: InitialCondition, t: float, x: Sequence[float],
                     qmc_points: int = 2 ** 16, qmc_reps: int = 16, seed: int = 0) -> HValue:
    """h(t, x) = (1/beta) log E exp(beta g(sqrt(t/d) Z + x))."""
    if t <= 0:
        raise ConfigError("h needs t > 0")
    x = np.asarray(x, dtype=float)
    d, beta = params.d, params.beta
    if x.shape != (d,):
        raise ConfigError(f"x must have {d} coordinates")
    if g.kind == ZERO:
        return HValue(0.0, "closed-form", True)
    if g.kind == CONSTANT:
        return HValue(g.value, "closed-form", True)
    if g.kind == LINEAR:
        a = np.asarray(g.slope)
        return HValue(float(a @ x + beta * (a @ a) * t / (2 * d)), "closed-form", True)
    sd = math.sqrt(t / d)
    prev = None
    if d <= 3:
        for n in GH_ORDERS:
            val = _gauss_hermite(g, beta, sd, x, n)
            if prev is not None and abs(val - prev) <= GH_RTOL * max(abs(val), 1e-3):
                return HValue(val, "gauss-hermite", True, n)
            prev = val
    return _qmc(g, beta, sd, x, qmc_points, qmc_reps, seed)


def gauss_hermite_h(params: KpzParams, g: InitialCondition, t: float, x: Sequence[float],
                    order: int) -> float:
    return _gauss_hermite(g, params.beta, math.sqrt(t / params.d), np.asarray(x, dtype=float), order)


def _gauss_hermite(g, beta, sd, x, n):
    z, w = hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    d = x.shape[0]
    grids = np.meshgrid(*([z] * d), indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids], axis=1) * sd + x
    logw = np.zeros(pts.shape[0])
    wgrids = np.meshgrid(*([np.log(w)] * d), indexing="ij")
    for wg in wgrids:
        logw += wg.ravel()
    e = logw + beta * g(pts)
    top = e.max()
    return float((top + math.log(np.exp(e - top).sum())) / beta)


def _qmc(g, beta, sd, x, npts, reps, seed):
    d = x.shape[0]
    means = []
    shift = None
    for r in range(reps):
        u = qmc.Sobol(d, scramble=True, seed=np.random.default_rng([seed, r])).random(npts)
        pts = ndtri(u) * sd + x
        e = beta * g(pts)
        if shift is None:
            shift = float(e.max())
        means.append(np.exp(e - shift).mean())
    means = np.array(means)
    m = means.mean()
    se_m = means.std(ddof=1) / math.sqrt(reps)
    if not m > 0:
        raise EstimationError("quasi-Monte Carlo estimate of E exp(beta g) is not positive")
    return HValue(float((math.log(m) + shift) / beta), "quasi-monte-carlo", True, npts * reps,
                  float(se_m / (beta * m)))


# -- discrete vs continuum -------------------------------------------------


@dataclass(frozen=True)
class GlimRow:
    eps: float
    t_eps: int
    x_eps: tuple
    discrete: float     # beta^-1 log G_eps(t_eps, x_eps)
    continuum: float    # h(t, x)
    gap: float


def glim_check(g: InitialCondition, eps_list: Sequence[float], t: float, x: Sequence[float],
               beta: float, d: int = 3) -> tuple[list[GlimRow], bool]:
    """Gap between beta^-1 log G_eps(t_eps, x_eps) and h(t, x) per eps.

    The flag says whether the gap at the smallest eps is no larger than at the largest.
    """
    from .scaling import lattice_point, lattice_time

    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    params = KpzParams(beta, d)
    h = cole_hopf_h(params, g, t, x)
    rows = []
    for eps in eps_list:
        te = lattice_time(t, eps)
        xe = lattice_point(x, eps)
        if g.kind == LINEAR:
            lg = log_G_linear(g.slope, eps, beta, te, xe)
        else:
            lg = log_G(g, eps, beta, te, xe)
        disc = lg / beta
        rows.append(GlimRow(eps, te, tuple(int(v) for v in xe), disc, h, abs(disc - h)))
    return rows, rows[-1].gap <= rows[0].gap
