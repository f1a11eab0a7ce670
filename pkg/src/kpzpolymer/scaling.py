"""Diffusive scaling: lattice coordinates, smoothing balls, renormalized surfaces, weak integrals.

Configured reals (t, x, eps) are read as the decimal numbers they print as,
so t_eps = floor(t / eps^2) is computed in exact rational arithmetic:
t = 1, eps = 0.1 gives 100, not the 99 that binary floating point would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ConeViolation, ConfigError, CoverageError
from .noise import NoiseLaw, log_mgf
from .polymer import HeightSlab


def _exact(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    return Fraction(repr(float(v)))


def lattice_time(t: float, eps: float) -> int:
    """t_eps = floor(eps^-2 t)."""
    return math.floor(_exact(t) / _exact(eps) ** 2)


def lattice_point(x: Sequence[float], eps: float) -> np.ndarray:
    """x_eps = componentwise floor(eps^-1 x)."""
    e = _exact(eps)
    return np.array([math.floor(_exact(v) / e) for v in x], dtype=np.int64)


def r_schedule(eps: float, gamma: float = 0.5, c: float = 1.0) -> float:
    """r_eps = max(1, c eps^-gamma)."""
    if not 0 < eps < 1:
        raise ConfigError("eps must lie in (0, 1)")
    if not 0 < gamma < 1 or c <= 0:
        raise ConfigError("need 0 < gamma < 1 and c > 0")
    return max(1.0, c * eps ** (-gamma))


@dataclass(frozen=True)
class ScalingPoint:
    t: float
    x: tuple
    eps: float
    r: float

    def __post_init__(self):
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if self.r <= 0:
            raise ConfigError("r must be positive")
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))

    @classmethod
    def scheduled(cls, t, x, eps, gamma=0.5, c=1.0) -> "ScalingPoint":
        return cls(t, tuple(x), eps, r_schedule(eps, gamma, c))

    @property
    def d(self) -> int:
        return len(self.x)

    @property
    def t_eps(self) -> int:
        return lattice_time(self.t, self.eps)

    @property
    def x_eps(self) -> np.ndarray:
        return lattice_point(self.x, self.eps)

    @property
    def schedule_ok(self) -> bool:
        """1 <= r_eps < 1/eps."""
        return 1 <= self.r < 1 / self.eps

    @property
    def reach(self) -> int:
        """L_inf half-width of the smoothing ball."""
        return int(math.floor(self.r + 1e-12))


@lru_cache(maxsize=64)
def _ball(d: int, r: float) -> np.ndarray:
    k = int(math.floor(r + 1e-12))
    off = np.indices((2 * k + 1,) * d).reshape(d, -1).T - k
    keep = (off ** 2).sum(axis=1) <= r * r * (1 + 1e-12)
    out = off[keep]
    out.flags.writeable = False
    return out


def ball_offsets(d: int, r: float) -> np.ndarray:
    """Integer offsets y with |y| <= r (Euclidean), by bounding-box scan."""
    if r < 0:
        raise ConfigError("radius must be nonnegative")
    return _ball(int(d), float(r))


def ball_size(d: int, r: float) -> int:
    return int(ball_offsets(d, r).shape[0])


def renormalization(t_eps: int, beta: float, law: NoiseLaw, d: int, eta_hat: float) -> float:
    """t_eps log(2d m(beta)) / beta + eta_hat / beta."""
    return (t_eps * (math.log(2 * d) + log_mgf(law, beta)) + eta_hat) / beta


@dataclass(frozen=True)
class Smoothed:
    f_tilde: float
    X: float            # ball average of F_eps(t_eps, .)
    f_unsmoothed: float
    ball_size: int


def _ball_values(slab: HeightSlab, centre: np.ndarray, offs: np.ndarray) -> np.ndarray:
    off = centre + offs - slab.center
    if np.max(np.abs(off)) > slab.valid_radius:
        raise CoverageError(f"ball around {tuple(centre)} leaves the exact region of the slab "
                            f"(radius {slab.valid_radius} around {tuple(slab.center)})")
    idx = tuple((off + slab.half_width).T)
    return slab.values[idx]


def smoothed_detail(slab: HeightSlab, sp: ScalingPoint, beta: float, law: NoiseLaw,
                    eta_hat: float) -> Smoothed:
    if slab.t != sp.t_eps:
        raise ConfigError(f"slab is at time {slab.t}, scaling point needs {sp.t_eps}")
    d = sp.d
    xe = sp.x_eps
    vals = _ball_values(slab, xe, ball_offsets(d, sp.r))           # beta f_eps(t_eps, y)
    centre = _ball_values(slab, xe, np.zeros((1, d), dtype=np.int64))[0]
    shift = sp.t_eps * (math.log(2 * d) + log_mgf(law, beta))
    avg = float(np.mean(vals))
    X = avg - shift
    return Smoothed((X - eta_hat) / beta, X, (centre - shift - eta_hat) / beta, int(vals.size))


def smoothed_surface(slab: HeightSlab, sp: ScalingPoint, beta: float, law: NoiseLaw,
                     eta_hat: float) -> float:
    """f~(t, x): ball average of f_eps(t_eps, .) around x_eps, renormalized."""
    return smoothed_detail(slab, sp, beta, law, eta_hat).f_tilde


def unsmoothed_surface(slab: HeightSlab, sp: ScalingPoint, beta: float, law: NoiseLaw,
                       eta_hat: float) -> float:
    """f^(eps)(t, x) = f_eps(t_eps, x_eps) renormalized."""
    if slab.t != sp.t_eps:
        raise ConfigError(f"slab is at time {slab.t}, scaling point needs {sp.t_eps}")
    try:
        v = slab.log_value(sp.x_eps)
    except ConeViolation as exc:
        raise CoverageError(str(exc)) from exc
    return v / beta - renormalization(sp.t_eps, beta, law, sp.d, eta_hat)


# -- test functions and the weak integral ---------------------------------

SMOOTH_BUMP, TENSOR_COSINE = "smooth-bump", "tensor-cosine-bump"


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported continuous phi.

    smooth-bump: A exp(1 - 1/(1 - |u|^2)) with u = (x - center)/radius, on |u| < 1.
    tensor-cosine-bump: A prod_a cos^2(pi u_a / 2) on the open cube |u_a| < 1.
    ``odd`` multiplies by u_1, giving a signed function with zero integral.
    """

    __test__ = False

    kind: str = SMOOTH_BUMP
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    amplitude: float = 1.0
    odd: bool = False

    def __post_init__(self):
        if self.kind not in (SMOOTH_BUMP, TENSOR_COSINE):
            raise ConfigError(f"unknown test function kind {self.kind!r}")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def support_radius(self) -> float:
        """Euclidean radius of the support around the center."""
        return self.radius * (1.0 if self.kind == SMOOTH_BUMP else math.sqrt(self.d))

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        u = (pts - np.asarray(self.center)) / self.radius
        if self.kind == SMOOTH_BUMP:
            s = (u ** 2).sum(axis=-1)
            inside = s < 1
            out = np.zeros(s.shape)
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        else:
            inside = np.all(np.abs(u) < 1, axis=-1)
            out = np.where(inside, np.prod(np.cos(np.pi * u / 2) ** 2, axis=-1), 0.0)
        if self.odd:
            out = out * u[..., 0]
        return self.amplitude * out

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the support (lower, upper corners)."""
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def reference_integral(self, n: int = 160, h=None) -> float:
        """Midpoint rule on an n^d grid over the support box; integrand phi (times h if given)."""
        lo, hi = self.box()
        d = self.d
        step = (hi - lo) / n
        axes = [lo[a] + (np.arange(n) + 0.5) * step[a] for a in range(d)]
        total = 0.0
        for i0 in range(n):      # slab by slab along the first axis to bound memory
            grids = np.meshgrid(*([axes[0][i0:i0 + 1]] + axes[1:]), indexing="ij")
            pts = np.stack([gr.ravel() for gr in grids], axis=1)
            v = self(pts)
            if h is not None:
                v = v * h(pts)
            total += float(v.sum())
        return total * float(np.prod(step))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius,
                "amplitude": self.amplitude, "odd": self.odd}

    @classmethod
    def from_dict(cls, data: dict) -> "TestFunction":
        data = dict(data)
        if "center" in data:
            data["center"] = tuple(data["center"])
        return cls(**data)


@dataclass
class LatticeField:
    """Values on the lattice box lo <= k <= lo + shape - 1 (componentwise)."""

    lo: np.ndarray
    values: np.ndarray

    def covers(self, lo, hi) -> bool:
        top = self.lo + np.asarray(self.values.shape) - 1
        return bool(np.all(self.lo <= lo) and np.all(np.asarray(hi) <= top))

    def at(self, ks: np.ndarray) -> np.ndarray:
        idx = tuple((ks - self.lo).T)
        return self.values[idx]


def window(phi: TestFunction, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Lattice index range of the cells meeting supp(phi), inflated by one cell each side."""
    lo, hi = phi.box()
    klo = np.array([math.floor(_exact(v) / _exact(eps)) for v in lo], dtype=np.int64) - 1
    khi = np.array([math.ceil(_exact(v) / _exact(eps)) for v in hi], dtype=np.int64) + 1
    return klo, khi


def weak_integral(fld: LatticeField, phi: TestFunction, eps: float) -> float:
    """eps^d sum_k f(k) phi(eps k) over the cells of side eps with lower corner eps k."""
    klo, khi = window(phi, eps)
    if not fld.covers(klo, khi):
        raise CoverageError("lattice field does not cover the support of phi inflated by one cell")
    if phi.is_zero:
        return 0.0
    d = phi.d
    axes = [np.arange(klo[a], khi[a] + 1) for a in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=1)
    w = phi(ks * eps)
    nz = w != 0
    return float(eps ** d * np.dot(fld.at(ks[nz]), w[nz]))
