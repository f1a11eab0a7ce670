import json

import pytest
import yaml

from kpzpolymer import errors
from kpzpolymer.cli import EXIT_CODES, main

SMALL = {"eps_list": [0.5, 0.3], "M": 2, "shift_radius": 4, "shift_spacing": 4,
         "eta": {"t": 8, "value": -0.03, "se": 0.004, "M": 100},
         "phi": {"kind": "smooth-bump", "center": [0, 0, 0], "radius": 0.6, "amplitude": 1.0, "odd": False}}


def write_cfg(tmp_path, **extra):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump({**SMALL, **extra}))
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_exit_codes_cover_every_error_category():
    cats = {cls.category for cls in vars(errors).values()
            if isinstance(cls, type) and issubclass(cls, errors.ArtifactError)}
    assert cats <= set(EXIT_CODES)
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
    assert 0 not in EXIT_CODES.values()


def test_walk_rho(capsys):
    code, out, _ = run(["walk", "rho", "--T", "200", "--M", "500", "--seed", "3"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "quantity,d,T,M,seed,param,estimate,se,n"
    assert lines[1].startswith("rho,3,200,500,3,")


def test_polymer_surface_rows(capsys):
    code, out, _ = run(["polymer", "--t", "2", "--radius", "1", "--M", "2"], capsys)
    assert code == 0
    assert "# surface" in out and "# aggregate" in out
    surface = out.split("# aggregate")[0].strip().splitlines()
    assert len(surface) == 2 + 2 * 27


def test_colehopf_linear(capsys):
    g = json.dumps({"kind": "linear", "slope": [0.2, 0, 0]})
    code, out, _ = run(["colehopf", "--g", g, "--x", "1,0,0"], capsys)
    assert code == 0
    value = float(out.strip().splitlines()[1].split(",")[1])
    assert value == pytest.approx(0.2 + 0.3 * 0.04 / 6, rel=1e-14)


def test_eta_tables(capsys, tmp_path):
    code, _, _ = run(["eta", "--t-list", "2,4", "--M", "20", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "eta.csv").read_text().startswith("t,eta,se,n\n")
    assert (tmp_path / "cauchy.csv").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "eta" and man["config"]["t_list"] == [2, 4]


def test_scale_rows(capsys, tmp_path):
    code, out, _ = run(["scale", "--config", write_cfg(tmp_path)], capsys)
    assert code == 0
    assert "replicate,eps,t,x1,x2,x3,f_tilde,f_unsmoothed,X" in out


def test_config_error_exit_code(capsys, tmp_path):
    code, _, err = run(["theorem", "--config", write_cfg(tmp_path), "--M", "1"], capsys)
    assert code == EXIT_CODES["config"]
    assert json.loads(err)["error"] == "config"


def test_memory_budget_exit_code(capsys, tmp_path):
    cfg = write_cfg(tmp_path, eps_list=[0.2, 0.02], memory_budget_gb=0.5)
    code, _, err = run(["theorem", "--config", cfg], capsys)
    assert code == EXIT_CODES["memory-budget"]
    assert "feasible" in json.loads(err)["message"]


def test_walk_odd_clt_length_is_config_error(capsys):
    code, _, err = run(["walk", "clt", "--n-list", "3", "--T", "3", "--M", "10"], capsys)
    assert code == EXIT_CODES["config"]
    assert json.loads(err)["error"] == "config"


@pytest.mark.parametrize("command", ["theorem", "corollary", "polymer"])
def test_rerun_from_manifest_is_byte_identical(command, capsys, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    argv = [command, "--out", str(first)]
    if command == "polymer":
        argv += ["--t", "3", "--M", "3", "--seed", "5"]
    else:
        argv += ["--config", write_cfg(tmp_path)]
    assert main(argv) == 0
    assert main(["rerun", str(first / "manifest.json"), "--out", str(second)]) == 0
    csvs = sorted(p.name for p in first.glob("*.csv"))
    assert csvs and csvs == sorted(p.name for p in second.glob("*.csv"))
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_rerun_missing_manifest(capsys, tmp_path):
    code, _, err = run(["rerun", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_CODES["config"]
