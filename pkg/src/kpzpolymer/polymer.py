"""The polymer surface, its normalized partition functions, and brute-force oracles.

Conventions: a HeightSlab stores beta*f(t, .) (log domain).  Normalized
quantities divide every path weight by (2d m(beta))^t, so that

    log Z_eps(t, x) = beta * f_eps(t, x) - t * log(2d m(beta)),

and Y(t, x) is Z_eps(t, x) for g = 0.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import _sweep
from .errors import ConeViolation, ConfigError, EnumerationLimit
from .noise import Environment, NoiseLaw, log_mgf, mu, xi, xi_field
from .stats import RunStats, stats
from . import _rng

BRUTE_FORCE_MAX_PATHS = 10 ** 7
_UNDERFLOW = 1e-250

# -- initial conditions ----------------------------------------------------

ZERO, CONSTANT, LINEAR, CUSTOM = "zero", "constant", "linear", "custom"


def _capped_norm(u, cap=10.0):
    return np.minimum(np.linalg.norm(u, axis=-1), cap)


# Named Lipschitz functions usable from config files: name -> (f(u, **params), Lipschitz constant).
CUSTOM_FUNCTIONS: dict[str, tuple[Callable, Callable[..., float]]] = {
    "capped-norm": (_capped_norm, lambda **kw: 1.0),
}


@dataclass(frozen=True)
class InitialCondition:
    """Lipschitz initial profile g: R^d -> R (the polymer sees g_eps(x) = g(eps x))."""

    kind: str = ZERO
    value: float = 0.0
    slope: tuple = ()
    name: str = ""
    params: tuple = ()
    func: Callable | None = field(default=None, compare=False, repr=False)
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in (ZERO, CONSTANT, LINEAR, CUSTOM):
            raise ConfigError(f"unknown initial condition kind {self.kind!r}")
        if self.kind == CUSTOM:
            if self.func is None and self.name not in CUSTOM_FUNCTIONS:
                raise ConfigError(f"unknown custom initial condition {self.name!r}")
            if self.func is None and self.lipschitz is None:
                object.__setattr__(self, "lipschitz",
                                   CUSTOM_FUNCTIONS[self.name][1](**dict(self.params)))
            if self.lipschitz is None or self.lipschitz < 0:
                raise ConfigError("custom initial conditions need a Lipschitz constant")

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def constant(cls, c: float):
        return cls(kind=CONSTANT, value=float(c))

    @classmethod
    def linear(cls, a: Sequence[float]):
        return cls(kind=LINEAR, slope=tuple(float(v) for v in a))

    @classmethod
    def custom(cls, name: str, **params):
        return cls(kind=CUSTOM, name=name, params=tuple(sorted(params.items())))

    @classmethod
    def from_callable(cls, func: Callable, lipschitz: float, name: str = "callable"):
        return cls(kind=CUSTOM, name=name, func=func, lipschitz=float(lipschitz))

    @property
    def lipschitz_constant(self) -> float:
        if self.kind in (ZERO, CONSTANT):
            return 0.0
        if self.kind == LINEAR:
            return float(np.linalg.norm(self.slope))
        return float(self.lipschitz)

    def __call__(self, u) -> np.ndarray:
        """Evaluate g at points u of shape (..., d)."""
        u = np.asarray(u, dtype=float)
        if self.kind == ZERO:
            return np.zeros(u.shape[:-1])
        if self.kind == CONSTANT:
            return np.full(u.shape[:-1], self.value)
        if self.kind == LINEAR:
            a = np.asarray(self.slope)
            if a.shape[0] != u.shape[-1]:
                raise ConfigError(f"slope has {a.shape[0]} entries, points have {u.shape[-1]}")
            return u @ a
        if self.func is not None:
            return np.asarray(self.func(u), dtype=float)
        f, _ = CUSTOM_FUNCTIONS[self.name]
        return f(u, **dict(self.params))

    def on_lattice(self, x, eps: float) -> np.ndarray:
        return self(eps * np.asarray(x, dtype=float))

    def spot_check(self, d: int, n: int = 256, seed: int = 0, scale: float = 5.0) -> bool:
        """|g(u) - g(v)| <= L |u - v| on random pairs."""
        rng = np.random.default_rng(seed)
        u = rng.normal(scale=scale, size=(n, d))
        v = u + rng.normal(size=(n, d))
        lhs = np.abs(self(u) - self(v))
        rhs = self.lipschitz_constant * np.linalg.norm(u - v, axis=1)
        return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-12))

    def to_dict(self) -> dict:
        if self.kind == CONSTANT:
            return {"kind": CONSTANT, "value": self.value}
        if self.kind == LINEAR:
            return {"kind": LINEAR, "slope": list(self.slope)}
        if self.kind == CUSTOM:
            if self.func is not None:
                raise ConfigError("callable initial conditions cannot be serialized")
            return {"kind": CUSTOM, "name": self.name, **dict(self.params)}
        return {"kind": ZERO}

    @classmethod
    def from_dict(cls, data: dict | str) -> "InitialCondition":
        if isinstance(data, str):
            # a bare name is either a kind or a registered custom function
            data = {"kind": CUSTOM, "name": data} if data in CUSTOM_FUNCTIONS else {"kind": data}
        data = dict(data)
        kind = data.pop("kind", ZERO)
        if kind == ZERO:
            return cls.zero()
        if kind == CONSTANT:
            return cls.constant(data.get("value", 0.0))
        if kind == LINEAR:
            return cls.linear(data["slope"])
        if kind == CUSTOM:
            name = data.pop("name")
            return cls.custom(name, **data)
        raise ConfigError(f"unknown initial condition kind {kind!r}")


# -- slabs and the one-step recursion --------------------------------------


@dataclass
class HeightSlab:
    """beta * f(t, .) on the cube |y - center|_inf <= half_width.

    Values are exact (equal to the infinite-lattice surface) at sites within
    L_inf distance ``valid_radius`` of the center.
    """

    t: int
    center: np.ndarray
    half_width: int
    valid_radius: int
    values: np.ndarray
    beta: float

    @property
    def d(self) -> int:
        return self.values.ndim

    def _index(self, x):
        off = np.asarray(x, dtype=np.int64) - self.center
        if np.max(np.abs(off)) > self.valid_radius:
            raise ConeViolation(f"site {tuple(x)} lies outside the exact region "
                                f"(radius {self.valid_radius} around {tuple(self.center)})")
        return tuple(off + self.half_width)

    def log_value(self, x) -> float:
        """beta * f(t, x)."""
        return float(self.values[self._index(x)])

    def f(self, x) -> float:
        return self.log_value(x) / self.beta

    def coords(self) -> np.ndarray:
        n = 2 * self.half_width + 1
        idx = np.indices((n,) * self.d).reshape(self.d, -1).T
        return idx - self.half_width + self.center

    def valid_view(self) -> np.ndarray:
        lo = self.half_width - self.valid_radius
        hi = self.half_width + self.valid_radius + 1
        return self.values[(slice(lo, hi),) * self.d]


def initial_slab(g: InitialCondition, eps: float, beta: float, center: Sequence[int],
                 half_width: int) -> HeightSlab:
    center = np.asarray(center, dtype=np.int64)
    d = center.shape[0]
    n = 2 * half_width + 1
    idx = np.indices((n,) * d).reshape(d, -1).T - half_width + center
    vals = beta * g.on_lattice(idx, eps).reshape((n,) * d)
    return HeightSlab(0, center, half_width, half_width, vals, beta)


def step(slab: HeightSlab, env: Environment, beta: float) -> HeightSlab:
    """One step of the recursion beta f(t+1, x) = beta xi(t+1, x) + logsumexp_{y~x} beta f(t, y)."""
    if slab.valid_radius < 1:
        raise ConeViolation("valid radius exhausted; enlarge the initial box")
    if beta <= 0:
        raise ConfigError("beta must be positive")
    d = slab.d
    v = slab.values
    n = v.shape[0]
    inner = (slice(1, n - 1),) * d
    neigh = []
    for ax in range(d):
        for sh in (0, 2):
            sl = [slice(1, n - 1)] * d
            sl[ax] = slice(sh, n - 2 + sh)
            neigh.append(v[tuple(sl)])
    stack = np.stack(neigh)
    mx = stack.max(axis=0)
    lse = mx + np.log(np.exp(stack - mx).sum(axis=0))
    hw = slab.half_width - 1
    m = n - 2
    coords = np.indices((m,) * d).reshape(d, -1).T - hw + slab.center
    noise = xi_field(env, slab.t + 1, coords).reshape((m,) * d)
    out = beta * noise + lse
    assert out.shape == v[inner].shape
    return HeightSlab(slab.t + 1, slab.center, hw, slab.valid_radius - 1, out, beta)


def evolve(env: Environment, beta: float, g: InitialCondition, eps: float, t: int,
           center: Sequence[int], radius: int) -> HeightSlab:
    """Repeated ``step`` from a box of half-width radius + t (the literal route)."""
    slab = initial_slab(g, eps, beta, center, radius + t)
    for _ in range(t):
        slab = step(slab, env, beta)
    return slab


@lru_cache(maxsize=4)
def _forward_setup(d, center, radius, t, g, eps, beta):
    geo = _sweep.forward_geometry(d, center, radius, t)
    coords = geo.flat_coords(np.arange(geo.size))
    init = beta * g.on_lattice(coords, eps)
    init[_sweep.forward_distance(d, geo.H, radius) > t] = -np.inf
    init.flags.writeable = False
    return geo, init


def surface(env: Environment, beta: float, g: InitialCondition, eps: float, t: int,
            center: Sequence[int], radius: int) -> HeightSlab:
    """beta f_eps(t, .) on the cube of half-width ``radius`` around ``center``.

    Uses the cone-pruned sweep: step s only updates sites within L1 distance
    t - s of the target cube, which is exactly the set the target depends on.
    """
    center = tuple(int(c) for c in center)
    d = len(center)
    if beta <= 0:
        raise ConfigError("beta must be positive")
    if t == 0:
        return initial_slab(g, eps, beta, center, radius)
    geo, init = _forward_setup(d, center, int(radius), int(t), g, float(eps), float(beta))
    c = math.log(2 * d) + log_mgf(env.law, beta)
    times = np.arange(1, t + 1, dtype=np.int64)
    R = int(radius)
    H = geo.H
    cube = (slice(H - R, H + R + 1),) * d

    top = float(np.max(init))
    prev = np.exp(init - top)
    final, logoff = _sweep.run(geo, prev, np.zeros_like(prev), times, env, beta, c)
    out = None
    if final is not None:
        final = final.reshape(geo.shape)[cube]
        if np.all(final > _UNDERFLOW):
            out = np.log(final) + logoff + top
    if out is None:
        final, _ = _sweep.run(geo, init.copy(), np.full(geo.size, -np.inf), times, env, beta, c,
                              log=True)
        out = final.reshape(geo.shape)[cube].copy()
    values = out + t * c
    return HeightSlab(int(t), np.asarray(center, dtype=np.int64), R, R, values, beta)


# -- brute force -----------------------------------------------------------


def _unit_steps(d):
    e = np.eye(d, dtype=np.int64)
    return np.concatenate([e, -e])


def brute_force_f(env: Environment, beta: float, g: InitialCondition, t: int, x: Sequence[int],
                  eps: float = 1.0) -> float:
    """f(t, x) by summing over every nearest-neighbour path of length t ending at x."""
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[0]
    if (2 * d) ** t > BRUTE_FORCE_MAX_PATHS:
        raise EnumerationLimit(f"(2d)^t = {(2 * d) ** t} paths exceeds {BRUTE_FORCE_MAX_PATHS}")
    if t == 0:
        return float(g.on_lattice(x[None, :], eps)[0])
    moves = _unit_steps(d)
    choice = np.array(list(itertools.product(range(2 * d), repeat=t)), dtype=np.int64)
    # q_i = x + sum of moves chosen for steps i+1..t (walking backwards from x)
    disp = moves[choice]                       # (P, t, d); disp[:, j] moves q_{t-j} -> q_{t-j-1}
    back = np.cumsum(disp, axis=1)             # back[:, j] = q_{t-j-1} - x
    total = np.zeros(choice.shape[0])
    total += xi_field(env, t, x[None, :])[0]
    for j in range(t - 1):
        pts = x + back[:, j]                   # q_{t-j-1}
        uniq, inv = np.unique(pts, axis=0, return_inverse=True)
        total += xi_field(env, t - j - 1, uniq)[inv.reshape(-1)]
    q0 = x + back[:, t - 1]
    expo = beta * g.on_lattice(q0, eps) + beta * total
    mx = expo.max()
    return float((mx + math.log(np.exp(expo - mx).sum())) / beta)


def memo_f(env: Environment, beta: float, g: InitialCondition, t: int, x: Sequence[int],
           eps: float = 1.0) -> float:
    """Independent recursive evaluation of f(t, x) with memoization (scalar arithmetic)."""
    d = len(x)
    moves = [tuple(int(v) for v in row) for row in _unit_steps(d)]

    @lru_cache(maxsize=None)
    def f(s, y):
        if s == 0:
            return float(g.on_lattice(np.asarray(y)[None, :], eps)[0])
        terms = [beta * f(s - 1, tuple(a + b for a, b in zip(y, mv))) for mv in moves]
        top = max(terms)
        return xi(env, s, y) + (top + math.log(sum(math.exp(v - top) for v in terms))) / beta

    return f(t, tuple(int(v) for v in x))


# -- normalized partition functions ---------------------------------------


@dataclass(frozen=True)
class Partition:
    value: float    # Y or Z_eps (may under/overflow for extreme parameters)
    log: float      # F = log Y or F_eps = log Z_eps, always finite


def _in_l2_regime(law: NoiseLaw, beta: float, rho: float = 0.3405) -> bool:
    return mu(law, beta) < 1.0 / rho


def log_partition(env: Environment, beta: float, g: InitialCondition | None, eps: float, t: int,
                  x: Sequence[int]) -> float:
    """log Z_eps(t, x) (log Y(t, x) when g is None or zero) by a backward point-to-line sweep."""
    x = tuple(int(v) for v in x)
    d = len(x)
    if t < 0:
        raise ConfigError("t must be nonnegative")
    g = g or InitialCondition.zero()
    if t == 0:
        return float(beta * g.on_lattice(np.asarray(x)[None, :], eps)[0])
    logm = log_mgf(env.law, beta)
    c = math.log(2 * d) + logm
    geo = _sweep.backward_geometry(d, x, t)
    # depth 1 is the single site x; the sweep covers depths 2..t (noise times t-1..1)
    start = xi(env, t, x) * beta - logm
    times = np.arange(t - 1, 0, -1, dtype=np.int64)
    here = geo.flat_index(x)
    prev = np.zeros(geo.size)
    prev[here] = 1.0
    final, logoff = _sweep.run(geo, prev, np.zeros(geo.size), times, env, beta, c, first=1)
    sites = geo.step_sites(t - 1)
    if final is not None:
        u = final[sites]
        if u.max() > _UNDERFLOW:
            logu = np.log(u, where=u > 0, out=np.full(u.shape, -np.inf)) + logoff
        else:
            final = None
    if final is None:
        prev = np.full(geo.size, -np.inf)
        prev[here] = 0.0
        final, _ = _sweep.run(geo, prev, np.full(geo.size, -np.inf), times, env, beta, c,
                              first=1, log=True)
        logu = final[sites]
    if g.kind != ZERO:
        pts = geo.flat_coords(sites)
        gz = beta * np.stack([g.on_lattice(pts + mv, eps) for mv in _unit_steps(d)], axis=1)
        top = gz.max(axis=1)
        logu = logu + top + np.log(np.exp(gz - top[:, None]).mean(axis=1))
    return start + _logsumexp(logu)


def _logsumexp(v: np.ndarray) -> float:
    top = float(np.max(v))
    return top + math.log(float(np.exp(v - top).sum()))


def normalized_Y(env: Environment, beta: float, t: int, x: Sequence[int]) -> Partition:
    """Y(t, x) = Z_eps(t, x) with g = 0, together with F = log Y."""
    if t < 1:
        raise ConfigError("Y(t, x) needs t >= 1")
    if not _in_l2_regime(env.law, beta):
        warnings.warn(f"beta={beta} looks outside the L2 regime", stacklevel=2)
    F = log_partition(env, beta, None, 1.0, t, x)
    return Partition(_safe_exp(F), F)


def partition_Z(env: Environment, beta: float, g: InitialCondition, eps: float, t: int,
                x: Sequence[int]) -> Partition:
    F = log_partition(env, beta, g, eps, t, x)
    return Partition(_safe_exp(F), F)


def _safe_exp(v):
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


# -- midpoint decomposition ------------------------------------------------


@dataclass
class MidpointDecomposition:
    s: int
    t: int
    x: tuple
    sites: np.ndarray          # D(s, t, x), one row per site
    Y_sy: np.ndarray           # Y(s, t, x, y)
    zeta: np.ndarray           # Y(s, t, x, y) / Y(s, t, x)
    Y_st: float                # Y(s, t, x)
    Z_s: np.ndarray            # Z_eps(s, y)
    Z_t: float                 # Z_eps(t, x), computed directly
    W: float                   # Z_eps(t, x) / Y(s, t, x)

    @property
    def residual(self) -> float:
        """|Z(t,x) - sum_y Y(s,t,x,y) Z(s,y)| / Z(t,x)."""
        return abs(self.Z_t - float(np.dot(self.Y_sy, self.Z_s))) / self.Z_t

    @property
    def weighted_average(self) -> float:
        return float(np.dot(self.zeta, self.Z_s))


def midpoint_decomposition(env: Environment, beta: float, g: InitialCondition, eps: float,
                           s: int, t: int, x: Sequence[int], max_gap: int = 4) -> MidpointDecomposition:
    """Split Z_eps(t, x) at time s by enumerating the path segments over (s, t]."""
    if not 1 <= s < t:
        raise ConfigError("need 1 <= s < t")
    if t - s > max_gap:
        raise EnumerationLimit(f"t - s = {t - s} exceeds the enumeration limit {max_gap}")
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[0]
    k = t - s
    logm = log_mgf(env.law, beta)
    moves = _unit_steps(d)
    choice = np.array(list(itertools.product(range(2 * d), repeat=k)), dtype=np.int64)
    back = np.cumsum(moves[choice], axis=1)    # back[:, j] = q_{t-j-1} - x
    expo = np.full(choice.shape[0], beta * xi(env, t, x))
    for j in range(k - 1):
        pts = x + back[:, j]
        uniq, inv = np.unique(pts, axis=0, return_inverse=True)
        expo += beta * xi_field(env, t - j - 1, uniq)[inv.reshape(-1)]
    weights = np.exp(expo - k * logm) / (2 * d) ** k
    ends = x + back[:, k - 1]                  # q_s
    sites, inv = np.unique(ends, axis=0, return_inverse=True)
    Y_sy = np.bincount(inv.reshape(-1), weights=weights, minlength=sites.shape[0])
    Y_st = float(Y_sy.sum())
    Z_s = np.array([math.exp(log_partition(env, beta, g, eps, s, y)) for y in sites])
    Z_t = math.exp(log_partition(env, beta, g, eps, t, x))
    return MidpointDecomposition(s, t, tuple(int(v) for v in x), sites, Y_sy, Y_sy / Y_st, Y_st,
                                 Z_s, Z_t, Z_t / Y_st)


# -- Monte Carlo over environments ----------------------------------------


def environment_seed(seed: int, index: int) -> int:
    return int(_rng.derive_seed(np.uint64(seed), np.uint64(index)))


@dataclass(frozen=True)
class EtaRow:
    t: int
    eta: float
    se: float
    n: int


def log_Y_coupled(env: Environment, beta: float, t_list: Sequence[int], d: int = 3) -> np.ndarray:
    """log Y(t, 0) for every t in t_list from a single sweep, in time-reversed environments.

    For horizon t the environment is xi_t(i, x) = xi(t + 1 - i, x), which has
    the same law as xi.  Depth k of every backward sweep then reads xi(k, .),
    so all horizons share one sweep and their estimates are positively
    correlated.
    """
    ts = sorted(set(int(t) for t in t_list))
    if ts[0] < 1:
        raise ConfigError("horizons must be >= 1")
    return _coupled(env, beta, ts, d)


def _coupled(env, beta, ts, d):
    T = ts[-1]
    logm = log_mgf(env.law, beta)
    c = math.log(2 * d) + logm
    origin = (0,) * d
    geo = _sweep.backward_geometry(d, origin, T)
    start = beta * xi(env, 1, origin) - logm
    here = geo.flat_index(origin)
    bufs = [np.zeros(geo.size), np.zeros(geo.size)]
    bufs[0][here] = 1.0
    out = {}
    depth, off = 1, 0.0
    for t in ts:
        if t > depth:
            times = np.arange(depth + 1, t + 1, dtype=np.int64)
            final, logoff = _sweep.run(geo, bufs[0], bufs[1], times, env, beta, c, first=depth)
            if final is None:
                raise ConeViolation("coupled sweep over/underflowed; use the per-horizon route")
            if final is not bufs[0]:
                bufs.reverse()
            off += logoff
            depth = t
        u = bufs[0][geo.step_sites(t - 1)]
        out[t] = start + off + math.log(float(u.sum()))
    return np.array([out[t] for t in ts])


def log_Y_samples(law: NoiseLaw, beta: float, t_list: Sequence[int], M: int, seed: int,
                  d: int = 3, coupled: bool = False, workers: int = 1) -> dict[int, np.ndarray]:
    """F(t, 0) = log Y(t, 0) for M independent environments, per t.

    ``coupled`` evaluates all horizons in one sweep per environment (see
    ``log_Y_coupled``); otherwise each horizon gets its own backward sweep in
    the same environment.
    """
    from .parallel import pmap

    ts = sorted(set(int(t) for t in t_list))
    origin = (0,) * d

    def one(i):
        env = Environment(environment_seed(seed, i), law)
        if coupled:
            return _coupled(env, beta, ts, d)
        return np.array([log_partition(env, beta, None, 1.0, t, origin) for t in ts])

    rows = np.array(pmap(one, range(M), workers)).reshape(M, len(ts))
    return {t: rows[:, k].copy() for k, t in enumerate(ts)}


def eta_estimate(law: NoiseLaw, beta: float, t_list: Sequence[int], M: int, seed: int,
                 d: int = 3, samples: dict | None = None, coupled: bool = True,
                 workers: int = 1) -> list[EtaRow]:
    """Monte Carlo mean of log Y(t, 0) for each t, with standard errors."""
    if not _in_l2_regime(law, beta):
        warnings.warn(f"beta={beta} looks outside the L2 regime", stacklevel=2)
    samples = samples or log_Y_samples(law, beta, t_list, M, seed, d, coupled, workers)
    rows = []
    for t in sorted(set(int(t) for t in t_list)):
        rs = stats(samples[t])
        rows.append(EtaRow(int(t), rs.mean, rs.se, rs.n))
    return rows


def cauchy_differences(samples: dict[int, np.ndarray], t_list: Sequence[int]) -> list[tuple[int, float, float]]:
    """(t, |eta(2t) - eta(t)|, se of the paired difference) for t with 2t also sampled."""
    rows = []
    for t in t_list:
        if 2 * t in samples:
            diff = stats(samples[2 * t] - samples[t])
            rows.append((int(t), abs(diff.mean), diff.se))
    return rows


@dataclass(frozen=True)
class TailRow:
    t: int
    mean: float
    se: float


def lower_tail_check(law: NoiseLaw, beta: float, theta: float, t_list: Sequence[int], M: int,
                     seed: int, d: int = 3, samples: dict | None = None) -> tuple[list[TailRow], bool]:
    """Empirical E exp(-theta F(t, 0)) per t and whether it stays bounded.

    Bounded means: value at the largest t <= 2 * value at the smallest t
    plus 3 combined standard errors.
    """
    if theta <= 0:
        raise ConfigError("theta must be positive")
    samples = samples or log_Y_samples(law, beta, t_list, M, seed, d)
    rows = []
    for t in t_list:
        rs = stats(np.exp(-theta * samples[t]))
        rows.append(TailRow(int(t), rs.mean, rs.se))
    first, last = rows[0], rows[-1]
    bound = 2 * first.mean + 3 * math.hypot(first.se, last.se)
    return rows, bool(last.mean <= bound)
