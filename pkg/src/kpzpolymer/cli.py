"""Command line interface.

Every subcommand resolves its arguments into a plain parameter dict, runs,
and (with --out) writes CSV tables plus manifest.json.  ``rerun`` replays a
manifest into a new directory.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ConfigError
from .harness import (ExperimentConfig, build_manifest, csv_text, load_manifest, load_structured,
                      resolve_eta, run_experiments, write_csv, write_manifest,
                      _replicate)
from .noise import Environment, NoiseLaw
from .polymer import (InitialCondition, cauchy_differences, environment_seed, eta_estimate,
                      log_Y_samples, surface)
from .stats import stats

EXIT_CODES = {"config": 2, "estimation": 3, "cone-exactness": 4, "coverage": 5,
              "enumeration-limit": 6, "memory-budget": 7, "error": 1}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _json_or_name(text: str):
    text = text.strip()
    return json.loads(text) if text.startswith("{") else text


# -- handlers: params -> {table name: (header, rows)} -----------------------


def cmd_walk(p: dict) -> dict:
    from .walk import WalkConfig, kappa_hat, local_clt_check, mu_power_expectation, rho_d, sample_intersections

    cfg = WalkConfig(p["d"], p["T"], p["M"], p["seed"])
    q = p["quantity"]
    lead = [p["d"], p["T"], p["M"], p["seed"]]
    header = ["quantity", "d", "T", "M", "seed", "param", "estimate", "se", "n"]
    if q == "rho":
        est = rho_d(cfg)
        rows = [["rho", *lead, "", est.estimate, est.stats.se, est.stats.n],
                ["tail_bracket", *lead, "", est.tail_bracket, "", est.stats.n]]
    elif q == "kappa":
        rs = kappa_hat(cfg, [0] * p["d"], p["offset"])
        rows = [["kappa", *lead, ";".join(map(str, p["offset"])), rs.mean, rs.se, rs.n]]
    elif q == "intersections":
        batch = sample_intersections(cfg, p["offset"], p["horizons"] or [p["T"]])
        rows = []
        for k, h in enumerate(batch.horizons):
            rs = stats(batch.counts[:, k].astype(float))
            rows.append(["mean_N", *lead, f"horizon={h}", rs.mean, rs.se, rs.n])
        hit = batch.hit.astype(float)
        rows.append(["hit", *lead, "", hit.mean(), stats(hit).se, len(batch)])
        emp = np.bincount(batch.counts[:, -1], minlength=21)[:21] / len(batch)
        rows.extend(["pmf_N", *lead, f"k={k}", emp[k], "", len(batch)] for k in range(21))
    elif q == "clt":
        rows = [["sup_mass_scaled", *lead, f"n={r.n}", r.scaled, r.se * r.n ** (p["d"] / 2), p["M"]]
                for r in local_clt_check(cfg, p["n_list"])]
    elif q == "mu-power":
        rs = mu_power_expectation(cfg, p["mu"], p["T"])
        rows = [["mu_power", *lead, f"mu={p['mu']!r}", rs.mean, rs.se, rs.n]]
    else:
        raise ConfigError(f"unknown walk quantity {q!r}")
    return {"walk": (header, rows)}


def cmd_polymer(p: dict) -> dict:
    law = NoiseLaw.from_dict(p["law"])
    g = InitialCondition.from_dict(p["g"])
    d = len(p["center"])
    rows, centre = [], []
    for i in range(p["M"]):
        env = Environment(environment_seed(p["seed"], i), law)
        slab = surface(env, p["beta"], g, p["eps"], p["t"], p["center"], p["radius"])
        f = slab.values.ravel() / p["beta"]
        rows.extend([i, p["t"], *c, v] for c, v in zip(slab.coords(), f))
        centre.append(slab.f(p["center"]))
    out = {"surface": (["replicate", "t"] + [f"x{a + 1}" for a in range(d)] + ["f"], rows)}
    if p["M"] >= 2:
        rs = stats(centre)
        out["aggregate"] = (["t", "mean_f_center", "se", "n"], [[p["t"], rs.mean, rs.se, rs.n]])
    return out


def cmd_colehopf(p: dict) -> dict:
    from .colehopf import KpzParams, cole_hopf_detail, glim_check

    g = InitialCondition.from_dict(p["g"])
    h = cole_hopf_detail(KpzParams(p["beta"], p["d"]), g, p["t"], p["x"])
    out = {"h": (["t", "value", "method", "converged", "order", "se"],
                 [[p["t"], h.value, h.method, h.converged, h.order, h.se]])}
    if p["eps_list"]:
        rows, _ = glim_check(g, p["eps_list"], p["t"], p["x"], p["beta"], p["d"])
        xs = [f"x{a + 1}" for a in range(p["d"])]
        out["glim"] = (["eps", "t"] + xs + ["discrete_value", "continuum_value", "gap"],
                       [[r.eps, p["t"], *p["x"], r.discrete, r.continuum, r.gap] for r in rows])
    return out


def cmd_eta(p: dict) -> dict:
    law = NoiseLaw.from_dict(p["law"])
    samples = log_Y_samples(law, p["beta"], p["t_list"], p["M"], p["seed"], p["d"], p["coupled"],
                            p["workers"])
    rows = eta_estimate(law, p["beta"], p["t_list"], p["M"], p["seed"], p["d"], samples=samples)
    out = {"eta": (["t", "eta", "se", "n"], [[r.t, r.eta, r.se, r.n] for r in rows])}
    diffs = cauchy_differences(samples, sorted(samples))
    if diffs:
        out["cauchy"] = (["t", "abs_diff", "se"], [list(r) for r in diffs])
    return out


def cmd_scale(p: dict) -> dict:
    cfg = ExperimentConfig.from_dict(p["config"])
    beta = cfg.beta_value
    eta = resolve_eta(cfg, beta)
    rows = [[s.replicate, s.eps, cfg.t, *cfg.x, s.f_tilde, s.f_unsmoothed, s.X]
            for i in range(cfg.M) for s in _replicate(replace(cfg, shift_radius=0), beta, eta.value, i, False)]
    xs = [f"x{a + 1}" for a in range(cfg.d)]
    return {"scale": (["replicate", "eps", "t"] + xs + ["f_tilde", "f_unsmoothed", "X"], rows),
            "eta_used": (["t", "value", "se", "M", "source"], [[eta.t, eta.value, eta.se, eta.M, eta.source]])}


HANDLERS = {"walk": cmd_walk, "polymer": cmd_polymer, "colehopf": cmd_colehopf,
            "eta": cmd_eta, "scale": cmd_scale}


def run_tables(command: str, params: dict, out: str | None) -> dict:
    start = time.perf_counter()
    tables = HANDLERS[command](params)
    wall = time.perf_counter() - start
    seeds = {"base": params.get("seed", params.get("config", {}).get("seed"))}
    if out:
        out_dir = Path(out)
        for name, (header, rows) in tables.items():
            write_csv(out_dir / f"{name}.csv", header, rows)
        write_manifest(out_dir, build_manifest(command, params, seeds, wall))
    else:
        for name, (header, rows) in tables.items():
            if len(tables) > 1:
                sys.stdout.write(f"# {name}\n")
            sys.stdout.write(csv_text(header, rows))
    return tables


def run_experiment_command(command: str, cfg_dict: dict, out: str | None) -> None:
    cfg = ExperimentConfig.from_dict({**cfg_dict, "output_dir": out})
    res = run_experiments(cfg, theorem=command in ("theorem", "experiment"),
                          corollary=command in ("corollary", "experiment"), write=out is not None)
    for rep in (res.theorem, res.corollary):
        if rep is not None and out is None:
            sys.stdout.write(csv_text(rep.csv_header(), rep.csv_rows()))


# -- argument parsing ------------------------------------------------------


def _common(sp, seed=True):
    sp.add_argument("--out", help="output directory for CSV files and manifest.json")
    if seed:
        sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kpzpolymer", description="Directed polymer / KPZ scaling experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    w = sub.add_parser("walk", help="random walk return and intersection statistics")
    w.add_argument("quantity", choices=["rho", "kappa", "intersections", "clt", "mu-power"])
    w.add_argument("--d", type=int, default=3)
    w.add_argument("--T", type=int, default=10_000)
    w.add_argument("--M", type=int, default=10_000)
    w.add_argument("--offset", type=_ints, default=None, help="comma-separated start offset")
    w.add_argument("--horizons", type=_ints, default=None)
    w.add_argument("--n-list", type=_ints, default=[10, 20, 40])
    w.add_argument("--mu", type=float, default=1.0)
    _common(w)

    pol = sub.add_parser("polymer", help="surface beta^-1 log Z on a cube, one block per environment")
    pol.add_argument("--beta", type=float, default=0.3)
    pol.add_argument("--law", type=_json_or_name, default="standard-gaussian")
    pol.add_argument("--g", type=_json_or_name, default="zero", help='kind name or JSON, e.g. \'{"kind": "linear", "slope": [0.2,0,0]}\'')
    pol.add_argument("--eps", type=float, default=1.0)
    pol.add_argument("--t", type=int, default=4)
    pol.add_argument("--center", type=_ints, default=[0, 0, 0])
    pol.add_argument("--radius", type=int, default=1)
    pol.add_argument("--M", type=int, default=1)
    _common(pol)

    ch = sub.add_parser("colehopf", help="Cole-Hopf solution h and discrete heat convergence")
    ch.add_argument("--g", type=_json_or_name, default="zero")
    ch.add_argument("--beta", type=float, default=0.3)
    ch.add_argument("--d", type=int, default=3)
    ch.add_argument("--t", type=float, default=1.0)
    ch.add_argument("--x", type=_floats, default=[0.0, 0.0, 0.0])
    ch.add_argument("--eps-list", type=_floats, default=[])
    _common(ch, seed=False)

    et = sub.add_parser("eta", help="Monte Carlo eta_hat(beta, t) = E log Y(t, 0)")
    et.add_argument("--beta", type=float, default=0.3)
    et.add_argument("--law", type=_json_or_name, default="standard-gaussian")
    et.add_argument("--d", type=int, default=3)
    et.add_argument("--t-list", type=_ints, default=[8, 16, 32, 64])
    et.add_argument("--M", type=int, default=1000)
    et.add_argument("--independent", action="store_true", help="one sweep per horizon instead of a shared one")
    et.add_argument("--workers", type=int, default=1)
    _common(et)

    for name, text in (("scale", "smoothed and unsmoothed rescaled surfaces per environment"),
                       ("theorem", "MSE of the smoothed surface against h along the eps ladder"),
                       ("corollary", "squared gap of the weak integral along the eps ladder")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="YAML or JSON file with ExperimentConfig keys")
        sp.add_argument("--M", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")

    rr = sub.add_parser("rerun", help="re-execute the run recorded in a manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", required=True)
    return ap


def _params(args) -> dict:
    if args.command == "walk":
        return {"quantity": args.quantity, "d": args.d, "T": args.T, "M": args.M, "seed": args.seed,
                "offset": args.offset or [0] * args.d, "horizons": args.horizons,
                "n_list": args.n_list, "mu": args.mu}
    if args.command == "polymer":
        return {"beta": args.beta, "law": NoiseLaw.from_dict(args.law).to_dict(),
                "g": InitialCondition.from_dict(args.g).to_dict(), "eps": args.eps, "t": args.t,
                "center": args.center, "radius": args.radius, "M": args.M, "seed": args.seed}
    if args.command == "colehopf":
        return {"g": InitialCondition.from_dict(args.g).to_dict(), "beta": args.beta, "d": args.d,
                "t": args.t, "x": args.x, "eps_list": args.eps_list}
    if args.command == "eta":
        return {"beta": args.beta, "law": NoiseLaw.from_dict(args.law).to_dict(), "d": args.d,
                "t_list": args.t_list, "M": args.M, "seed": args.seed,
                "coupled": not args.independent, "workers": args.workers}
    cfg = load_structured(args.config) if args.config else {}
    for key in ("M", "seed", "workers"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    cfg = ExperimentConfig.from_dict({**cfg, "output_dir": None}).to_dict()
    return {"config": cfg} if args.command == "scale" else cfg


def dispatch(command: str, params: dict, out: str | None) -> None:
    if command in HANDLERS:
        run_tables(command, params, out)
    elif command in ("theorem", "corollary", "experiment"):
        run_experiment_command(command, params, out)
    else:
        raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            man = load_manifest(args.manifest)
            command = man["command"]
            if command == "experiment":
                command = {(True, False): "theorem", (False, True): "corollary"}.get(
                    (man.get("theorem"), man.get("corollary")), "experiment")
            dispatch(command, man["config"], args.out)
        else:
            dispatch(args.command, _params(args), args.out)
    except ArtifactError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return EXIT_CODES.get(exc.category, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
