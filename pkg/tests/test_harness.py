import json
import math

import numpy as np
import pytest

from kpzpolymer import harness
from kpzpolymer.errors import ConfigError, MemoryBudgetExceeded
from kpzpolymer.harness import (ExperimentConfig, load_manifest, resolve_eta, run_experiments,
                                run_corollary_experiment, run_theorem_experiment, translates)
from kpzpolymer.noise import Environment, NoiseLaw, beta0
from kpzpolymer.polymer import InitialCondition
from kpzpolymer.scaling import TestFunction
from kpzpolymer.stats import Welford, combined_se, stats

FIXED_ETA = {"t": 8, "value": -0.03, "se": 0.004, "M": 100}


def small(**kw):
    base = dict(eps_list=(0.5, 0.3), M=3, eta=FIXED_ETA, shift_radius=4, shift_spacing=4,
                phi=TestFunction(radius=0.6))
    base.update(kw)
    return ExperimentConfig(**base)


# -- stats -----------------------------------------------------------------


def test_stats_examples():
    s = stats([1, 1, 1])
    assert (s.mean, s.variance, s.se) == (1.0, 0.0, 0.0)
    s = stats([0, 2])
    assert (s.mean, s.variance, s.se) == (1.0, 2.0, 1.0)


def test_stats_gaussian_band():
    s = stats(np.random.default_rng(0).standard_normal(100_000))
    assert abs(s.mean) <= 4 * s.se


def test_stats_needs_two_samples():
    with pytest.raises(ValueError):
        stats([1.0])


def test_welford_matches_numpy():
    x = np.random.default_rng(1).normal(3.0, 2.0, size=5000)
    s = Welford().extend(x).result()
    assert s.mean == pytest.approx(x.mean(), rel=1e-12)
    assert s.variance == pytest.approx(x.var(ddof=1), rel=1e-10)
    assert combined_se(s, s) == pytest.approx(math.sqrt(2) * s.se)


# -- configuration ---------------------------------------------------------


@pytest.mark.parametrize("bad", [dict(d=2), dict(M=1), dict(eps_list=(0.1, 0.2)), dict(eps_list=(1.2,)),
                                 dict(t=0.0), dict(beta=-1.0), dict(beta="max"), dict(x=(0, 0)),
                                 dict(shift_spacing=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_auto_beta():
    cfg = ExperimentConfig(beta="auto")
    assert cfg.beta_value == pytest.approx(0.5 * beta0(NoiseLaw(), cfg.rho_d))


def test_config_round_trip_yaml_and_json(tmp_path):
    cfg = small(g=InitialCondition.constant(1.5), seed=7)
    y = tmp_path / "cfg.yaml"
    import yaml

    y.write_text(yaml.safe_dump(cfg.to_dict()))
    j = tmp_path / "cfg.json"
    j.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_file(y) == cfg
    assert ExperimentConfig.from_file(j) == cfg


def test_config_rejects_unknown_keys_and_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"replicates": 3})
    p = tmp_path / "list.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_memory_refusal_reports_feasible_ladder():
    cfg = ExperimentConfig(eps_list=(0.2, 0.1, 0.02), memory_budget_gb=1.0)
    with pytest.raises(MemoryBudgetExceeded) as info:
        run_experiments(cfg, write=False)
    assert info.value.feasible_eps == [0.2, 0.1]
    assert info.value.required_bytes > 2 ** 30


def test_translates_grid():
    ys = translates(ExperimentConfig(shift_radius=12, shift_spacing=4))
    assert ys.shape == (343, 3)
    assert (0, 0, 0) in set(map(tuple, ys.tolist()))
    assert translates(ExperimentConfig(shift_radius=0)).shape == (1, 3)
    assert translates(ExperimentConfig(g=InitialCondition.custom("capped-norm"))).shape == (1, 3)


def test_resolve_eta_from_config_and_estimate():
    assert resolve_eta(small(), 0.3).source == "config"
    info = resolve_eta(small(eta=None, eta_t=4, eta_M=20), 0.3)
    assert info.source == "computed" and info.t == 4 and info.M == 20 and info.se > 0


# -- experiments -----------------------------------------------------------


@pytest.fixture(scope="module")
def linear_run():
    return run_experiments(small(), write=False)


def test_reports_have_rows_in_eps_order(linear_run):
    for rep in (linear_run.theorem, linear_run.corollary):
        assert [r.eps for r in rep.rows] == [0.5, 0.3]
        assert all(r.mse >= 0 and r.n_translates == 27 for r in rep.rows)
        assert len(rep.diffs) == 1
    assert linear_run.theorem.rows[0].target == pytest.approx(0.3 * 0.04 / 6)


def test_mse_decomposition(linear_run):
    for rep in (linear_run.theorem, linear_run.corollary):
        for r in rep.rows:
            assert abs(r.mse - (r.bias ** 2 + r.variance)) <= 1e-9


def test_unshifted_translate_is_the_reported_sample(linear_run):
    for s in linear_run.samples:
        assert s.smoothed[0] == s.f_tilde


def test_translate_covariance_exact_without_noise(monkeypatch):
    # with no noise every translate sees the same environment, so corrected values coincide
    monkeypatch.setattr(harness, "Environment", lambda seed, law: Environment(seed, law, mode="zero"))
    g = InitialCondition.linear((0.7, -0.4, 0.3))
    res = run_experiments(small(g=g, M=2), write=False)
    for s in res.samples:
        np.testing.assert_allclose(s.smoothed, s.smoothed[0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(s.weak, s.weak[0], rtol=0, atol=1e-12)


def test_constant_g_targets():
    cfg = small(g=InitialCondition.constant(1.25))
    res = run_experiments(cfg, write=False)
    assert res.theorem.rows[0].target == 1.25
    assert res.reference == pytest.approx(1.25 * cfg.phi.reference_integral(), rel=1e-12)


def test_zero_phi_gives_zero_on_both_sides():
    res = run_corollary_experiment(small(phi=TestFunction(radius=0.6, amplitude=0.0)), write=False)
    assert res.rows[0].target == 0.0
    for r in res.rows:
        assert r.mean == 0.0 and r.mse == 0.0


def test_constant_g_mse_not_larger_at_smaller_eps():
    cfg = small(g=InitialCondition.constant(0.5), eps_list=(0.25, 0.125), M=6)
    rep = run_theorem_experiment(cfg, write=False)
    (d,) = rep.diffs
    assert rep.rows[1].mse - rep.rows[0].mse <= 3 * d.se


def test_bit_identical_rerun(tmp_path):
    a = run_experiments(small(M=2, output_dir=str(tmp_path / "a")))
    b = run_experiments(small(M=2, output_dir=str(tmp_path / "b")))
    for name in ("samples", "theorem", "theorem_diffs", "corollary", "corollary_diffs"):
        assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()
    assert a.manifest["seeds"] == b.manifest["seeds"]


def test_manifest_contents(tmp_path):
    run_experiments(small(M=2, output_dir=str(tmp_path)))
    man = load_manifest(tmp_path)
    assert set(man) >= {"command", "config", "seeds", "versions", "wall_time_s"}
    assert ExperimentConfig.from_dict(man["config"]) == small(M=2, output_dir=str(tmp_path))
    assert len(man["seeds"]["replicates"]) == 2
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing")
