"""Experiment configuration, the two headline experiments, and run persistence."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _rng
from .colehopf import KpzParams, cole_hopf_h
from .errors import ConfigError, MemoryBudgetExceeded
from .noise import Environment, NoiseLaw, beta0
from .parallel import pmap
from .polymer import LINEAR, CONSTANT, ZERO, InitialCondition, eta_estimate, environment_seed, surface
from .scaling import (LatticeField, ScalingPoint, TestFunction, ball_size, renormalization,
                      smoothed_detail, weak_integral, window)
from .stats import stats

BYTES_PER_SITE = 64          # init + two sweep buffers + transient coordinates
_TAG_ETA = 0xE7A
DEFAULT_RHO = 0.3405


@dataclass
class ExperimentConfig:
    d: int = 3
    law: NoiseLaw = field(default_factory=NoiseLaw)
    beta: float | str = 0.3
    g: InitialCondition = field(default_factory=lambda: InitialCondition.linear((0.2, 0.0, 0.0)))
    t: float = 1.0
    x: tuple = (0.0, 0.0, 0.0)
    eps_list: tuple = (0.2, 0.14, 0.1)
    gamma: float = 0.5
    c: float = 1.0
    M: int = 64
    seed: int = 0
    output_dir: str | None = None
    phi: TestFunction = field(default_factory=TestFunction)
    eta_t: int = 64
    eta_M: int = 1000
    eta: dict | None = None          # {"t", "value", "se", "M"} to skip the eta run
    rho_d: float = DEFAULT_RHO       # used by beta = "auto"
    couple_scales: bool = True
    shift_radius: int = 12           # translate grid for pooling errors (0 disables)
    shift_spacing: int = 4
    memory_budget_gb: float = 8.0
    workers: int = 1

    def __post_init__(self):
        self.x = tuple(float(v) for v in self.x)
        self.eps_list = tuple(float(e) for e in self.eps_list)
        if self.d < 3:
            raise ConfigError("d must be >= 3")
        if len(self.x) != self.d:
            raise ConfigError(f"x must have {self.d} coordinates")
        if not self.eps_list or any(not 0 < e < 1 for e in self.eps_list):
            raise ConfigError("eps values must lie in (0, 1)")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ConfigError("eps list must be strictly decreasing")
        if self.M < 2:
            raise ConfigError("need M >= 2 replicates")
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if isinstance(self.beta, str):
            if self.beta != "auto":
                raise ConfigError("beta must be a number or 'auto'")
        elif self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.shift_radius < 0 or self.shift_spacing < 1:
            raise ConfigError("shift_radius must be >= 0 and shift_spacing >= 1")
        if self.phi.d != self.d:
            raise ConfigError("test function dimension does not match d")

    @property
    def beta_value(self) -> float:
        if self.beta == "auto":
            b0 = beta0(self.law, self.rho_d)
            if math.isinf(b0):
                raise ConfigError("beta0 is infinite for this law; give beta explicitly")
            return 0.5 * b0
        return float(self.beta)

    def scaling_points(self) -> list[ScalingPoint]:
        return [ScalingPoint.scheduled(self.t, self.x, e, self.gamma, self.c) for e in self.eps_list]

    def to_dict(self) -> dict:
        out = {
            "d": self.d, "law": self.law.to_dict(), "beta": self.beta, "g": self.g.to_dict(),
            "t": self.t, "x": list(self.x), "eps_list": list(self.eps_list), "gamma": self.gamma,
            "c": self.c, "M": self.M, "seed": self.seed, "output_dir": self.output_dir,
            "phi": self.phi.to_dict(), "eta_t": self.eta_t, "eta_M": self.eta_M, "eta": self.eta,
            "rho_d": self.rho_d, "couple_scales": self.couple_scales,
            "shift_radius": self.shift_radius, "shift_spacing": self.shift_spacing,
            "memory_budget_gb": self.memory_budget_gb, "workers": self.workers,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "law" in data:
            data["law"] = NoiseLaw.from_dict(data["law"])
        if "g" in data:
            data["g"] = InitialCondition.from_dict(data["g"])
        if "phi" in data:
            data["phi"] = TestFunction.from_dict(data["phi"])
        for key in ("x", "eps_list"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ExperimentConfig":
        return cls.from_dict(load_structured(path))


def load_structured(path: str | os.PathLike) -> dict:
    """Read a YAML or JSON mapping."""
    import yaml

    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    return data


# -- translates ----------------------------------------------------------------


def translation_covariant(g: InitialCondition) -> bool:
    """g(u + v) - g(u) depends on v only, so shifting the endpoint shifts f deterministically."""
    return g.kind in (ZERO, CONSTANT, LINEAR)


def translates(cfg: ExperimentConfig) -> np.ndarray:
    """Lattice shifts y used to pool error samples; always contains 0.

    The environment law is shift invariant and, for translation-covariant g,
    f_eps(t, x + y) - g-shift(y) has the law of f_eps(t, x).  Averaging the
    squared error over shifts therefore estimates the same MSE with far less
    variance.  Other g use the single point y = 0.
    """
    R, S = cfg.shift_radius, cfg.shift_spacing
    if R == 0 or not translation_covariant(cfg.g):
        return np.zeros((1, cfg.d), dtype=np.int64)
    half = np.arange(0, R + 1, S)
    axis = np.concatenate([-half[:0:-1], half])
    grids = np.meshgrid(*([axis] * cfg.d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def g_shift(g: InitialCondition, eps: float, ys: np.ndarray) -> np.ndarray:
    """g(eps (k + y)) - g(eps k) for translation-covariant g."""
    if g.kind == LINEAR:
        return eps * (ys @ np.asarray(g.slope))
    return np.zeros(ys.shape[0])


# -- memory budget -----------------------------------------------------------


def _cube_for(sp: ScalingPoint, phi: TestFunction | None, shift: int = 0) -> tuple[np.ndarray, int]:
    """Cube (center, radius) holding every shifted smoothing ball and phi window."""
    xe = sp.x_eps
    lo, hi = xe - sp.reach, xe + sp.reach
    if phi is not None:
        klo, khi = window(phi, sp.eps)
        lo, hi = np.minimum(lo, klo), np.maximum(hi, khi)
    lo, hi = lo - shift, hi + shift
    center = (lo + hi) // 2
    radius = int(max(np.max(hi - center), np.max(center - lo)))
    return center, radius


def _shift_reach(cfg: ExperimentConfig) -> int:
    return int(np.max(np.abs(translates(cfg))))


def memory_required(cfg: ExperimentConfig, sp: ScalingPoint, with_phi: bool = True) -> int:
    _, radius = _cube_for(sp, cfg.phi if with_phi else None, _shift_reach(cfg))
    return BYTES_PER_SITE * (2 * (radius + sp.t_eps) + 1) ** cfg.d


def check_memory(cfg: ExperimentConfig, with_phi: bool = True) -> None:
    budget = cfg.memory_budget_gb * 2 ** 30
    need = {sp.eps: memory_required(cfg, sp, with_phi) for sp in cfg.scaling_points()}
    too_big = [e for e, b in need.items() if b > budget]
    if too_big:
        feasible = [e for e, b in need.items() if b <= budget]
        worst = max(need.values())
        raise MemoryBudgetExceeded(
            f"eps {too_big} need up to {worst / 2**30:.2f} GiB, budget is {cfg.memory_budget_gb} GiB; "
            f"largest feasible ladder: {feasible}", worst, feasible)


# -- replicates ----------------------------------------------------------------


@dataclass(frozen=True)
class EtaInfo:
    t: int
    value: float
    se: float
    M: int
    source: str


def resolve_eta(cfg: ExperimentConfig, beta: float) -> EtaInfo:
    if cfg.eta is not None:
        e = cfg.eta
        return EtaInfo(int(e.get("t", cfg.eta_t)), float(e["value"]), float(e.get("se", 0.0)),
                       int(e.get("M", 0)), "config")
    seed = int(_rng.derive_seed(np.uint64(cfg.seed), np.uint64(_TAG_ETA)))
    (row,) = eta_estimate(cfg.law, beta, [cfg.eta_t], cfg.eta_M, seed, cfg.d, workers=cfg.workers)
    return EtaInfo(row.t, row.eta, row.se, row.n, "computed")


def replicate_seeds(cfg: ExperimentConfig) -> list[int]:
    return [environment_seed(cfg.seed, i) for i in range(cfg.M)]


@dataclass
class ScaleSample:
    """One environment at one eps.  ``smoothed`` and ``weak`` hold one value per translate,
    already corrected by the deterministic g-shift; index 0 is the unshifted point."""

    replicate: int
    eps: float
    f_tilde: float
    f_unsmoothed: float
    X: float
    smoothed: np.ndarray
    weak: np.ndarray | None


def _replicate(cfg: ExperimentConfig, beta: float, eta: float, i: int, with_phi: bool) -> list[ScaleSample]:
    env = Environment(environment_seed(cfg.seed, i), cfg.law)
    ys = translates(cfg)
    ys = np.concatenate([np.zeros((1, cfg.d), dtype=np.int64), ys[np.any(ys != 0, axis=1)]])
    reach = int(np.max(np.abs(ys)))
    out = []
    for sp in cfg.scaling_points():
        te = sp.t_eps
        center, radius = _cube_for(sp, cfg.phi if with_phi else None, reach)
        e = env.reflected(te) if cfg.couple_scales and te > 0 else env
        slab = surface(e, beta, cfg.g, sp.eps, te, center, radius)
        shifts = g_shift(cfg.g, sp.eps, ys)
        dets = [smoothed_detail(replace(slab, center=slab.center - y), sp, beta, cfg.law, eta) for y in ys]
        smoothed = np.array([dt.f_tilde for dt in dets]) - shifts
        weak = None
        if with_phi:
            renorm = renormalization(te, beta, cfg.law, cfg.d, eta)
            vals = slab.values / beta - renorm
            lo = slab.center - radius
            weak = np.array([weak_integral(LatticeField(lo - y, vals), cfg.phi, sp.eps) for y in ys])
            weak -= shifts * _riemann_phi(cfg.phi, sp.eps)
        c = dets[0]
        out.append(ScaleSample(i, sp.eps, c.f_tilde, c.f_unsmoothed, c.X, smoothed, weak))
    return out


# -- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    t_eps: int
    r_eps: float
    ball_size: int
    n_translates: int
    mean: float         # pooled over environments and translates
    se: float
    target: float
    bias: float
    variance: float     # population variance of the pooled samples, so mse = bias^2 + variance
    mse: float
    mse_se: float


@dataclass(frozen=True)
class DiffRow:
    eps_from: float
    eps_to: float
    decrease: float     # mse(eps_from) - mse(eps_to)
    se: float           # paired over environments, including eta uncertainty
    z: float

    @property
    def significant(self) -> bool:
        return self.decrease > 3 * self.se


@dataclass
class ConvergenceReport:
    quantity: str
    rows: list[ConvergenceRow]
    diffs: list[DiffRow]
    eta: EtaInfo
    per_env_sq_err: dict       # eps -> per-environment mean squared error

    @property
    def decreasing(self) -> bool:
        return all(r.significant for r in self.diffs)

    def csv_header(self) -> list[str]:
        return list(ConvergenceRow.__dataclass_fields__)

    def csv_rows(self) -> list[list]:
        return [[_fmt(v) for v in asdict(r).values()] for r in self.rows]

    def diff_rows(self) -> list[list]:
        return [[_fmt(d.eps_from), _fmt(d.eps_to), _fmt(d.decrease), _fmt(d.se), _fmt(d.z),
                 _fmt(d.significant)] for d in self.diffs]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _aggregate(quantity: str, cfg: ExperimentConfig, values: dict[float, np.ndarray], target: float,
               eta: EtaInfo, beta: float, eta_weight: dict[float, float]) -> ConvergenceReport:
    """values[eps] has shape (M, n_translates); eta_weight[eps] * beta = -d(value)/d(eta_hat)."""
    rows = []
    per_env = {}
    for sp in cfg.scaling_points():
        v = values[sp.eps]
        mean = float(v.mean())
        sq = ((v - target) ** 2).mean(axis=1)
        per_env[sp.eps] = sq
        rows.append(ConvergenceRow(
            sp.eps, sp.t_eps, sp.r, ball_size(sp.d, sp.r), v.shape[1], mean,
            stats(v.mean(axis=1)).se, target, mean - target, float(np.mean((v - mean) ** 2)),
            float(np.mean((v - target) ** 2)), stats(sq).se))
    diffs = []
    for a, b in zip(rows, rows[1:]):
        paired = stats(per_env[a.eps] - per_env[b.eps])
        # d(mse_a - mse_b)/d(eta_hat) = -(2/beta)(bias_a w_a - bias_b w_b)
        eta_term = 2 * abs(a.bias * eta_weight[a.eps] - b.bias * eta_weight[b.eps]) * eta.se / beta
        se = math.hypot(paired.se, eta_term)
        dec = a.mse - b.mse
        diffs.append(DiffRow(a.eps, b.eps, dec, se, dec / se if se > 0 else math.inf))
    return ConvergenceReport(quantity, rows, diffs, eta, per_env)


@dataclass
class ExperimentResult:
    theorem: ConvergenceReport | None
    corollary: ConvergenceReport | None
    reference: float | None          # integral of h phi
    samples: list[ScaleSample]
    manifest: dict
    wall_time: float


def h_values(params: KpzParams, g: InitialCondition, t: float, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    if g.kind == ZERO:
        return np.zeros(pts.shape[0])
    if g.kind == CONSTANT:
        return np.full(pts.shape[0], g.value)
    if g.kind == LINEAR:
        a = np.asarray(g.slope)
        return pts @ a + params.beta * (a @ a) * t / (2 * params.d)
    return np.array([cole_hopf_h(params, g, t, p) for p in pts])


def run_experiments(cfg: ExperimentConfig, theorem: bool = True, corollary: bool = True,
                    write: bool = True) -> ExperimentResult:
    """Shared driver: one surface per (environment, eps) feeds both experiments."""
    start = time.perf_counter()
    check_memory(cfg, with_phi=corollary)
    beta = cfg.beta_value
    params = KpzParams(beta, cfg.d)
    eta = resolve_eta(cfg, beta)
    per_rep = pmap(lambda i: _replicate(cfg, beta, eta.value, i, corollary), range(cfg.M), cfg.workers)
    by_eps = {e: [rep[k] for rep in per_rep] for k, e in enumerate(cfg.eps_list)}
    th = co = ref = None
    if theorem:
        h = cole_hopf_h(params, cfg.g, cfg.t, cfg.x)
        vals = {e: np.array([s.smoothed for s in by_eps[e]]) for e in cfg.eps_list}
        th = _aggregate("f_tilde", cfg, vals, h, eta, beta, {e: 1.0 for e in cfg.eps_list})
    if corollary:
        if cfg.phi.is_zero:
            ref = 0.0
        else:
            ref = cfg.phi.reference_integral(h=lambda p: h_values(params, cfg.g, cfg.t, p))
        vals = {e: np.array([s.weak for s in by_eps[e]]) for e in cfg.eps_list}
        weights = {e: _riemann_phi(cfg.phi, e) for e in cfg.eps_list}
        co = _aggregate("weak_integral", cfg, vals, ref, eta, beta, weights)
    wall = time.perf_counter() - start
    manifest = build_manifest("experiment", cfg.to_dict(), {
        "base": cfg.seed, "replicates": replicate_seeds(cfg),
        "eta": {"t": eta.t, "value": eta.value, "se": eta.se, "M": eta.M, "source": eta.source},
    }, wall, {"theorem": theorem, "corollary": corollary, "beta": beta})
    samples = [s for rep in per_rep for s in rep]
    result = ExperimentResult(th, co, ref, samples, manifest, wall)
    if write and cfg.output_dir:
        write_experiment(Path(cfg.output_dir), result)
    return result


def _riemann_phi(phi: TestFunction, eps: float) -> float:
    """eps^d sum_k phi(eps k): the weight with which eta_hat enters the weak integral."""
    klo, khi = window(phi, eps)
    axes = [np.arange(klo[a], khi[a] + 1) for a in range(phi.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=1)
    return float(eps ** phi.d * phi(ks * eps).sum())


def run_theorem_experiment(cfg: ExperimentConfig, write: bool = True) -> ConvergenceReport:
    return run_experiments(cfg, theorem=True, corollary=False, write=write).theorem


def run_corollary_experiment(cfg: ExperimentConfig, write: bool = True) -> ConvergenceReport:
    return run_experiments(cfg, theorem=False, corollary=True, write=write).corollary


# -- persistence ---------------------------------------------------------------


def versions() -> dict:
    import numba
    import scipy

    from importlib import metadata

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "package": pkg}


def build_manifest(command: str, config: dict, seeds: dict, wall_time: float, extra: dict | None = None) -> dict:
    return {"command": command, "config": config, "seeds": seeds, "versions": versions(),
            "wall_time_s": wall_time, **(extra or {})}


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))


def write_manifest(out_dir: Path, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def sample_rows(result: ExperimentResult) -> list[list]:
    rows = []
    for smp in result.samples:
        th = result.theorem.per_env_sq_err[smp.eps][smp.replicate] if result.theorem else math.nan
        co = result.corollary.per_env_sq_err[smp.eps][smp.replicate] if result.corollary else math.nan
        weak = smp.weak[0] if smp.weak is not None else math.nan
        rows.append([smp.replicate, smp.eps, smp.f_tilde, smp.f_unsmoothed, smp.X, weak, th, co])
    return rows


SAMPLE_HEADER = ["replicate", "eps", "f_tilde", "f_unsmoothed", "X", "weak_integral",
                 "theorem_sq_err", "corollary_sq_err"]


def write_experiment(out_dir: Path, result: ExperimentResult) -> None:
    write_csv(out_dir / "samples.csv", SAMPLE_HEADER, sample_rows(result))
    diff_header = ["eps_from", "eps_to", "decrease", "se", "z", "significant"]
    for rep, name in ((result.theorem, "theorem"), (result.corollary, "corollary")):
        if rep is None:
            continue
        write_csv(out_dir / f"{name}.csv", rep.csv_header(), rep.csv_rows())
        write_csv(out_dir / f"{name}_diffs.csv", diff_header, rep.diff_rows())
    write_manifest(out_dir, result.manifest)


def load_manifest(path: str | os.PathLike) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {p}: {exc}") from exc
