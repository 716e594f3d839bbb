import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from roadfield import analysis as an
from roadfield import cli
from roadfield.eigensolver import SolverError

ROOT = Path(__file__).resolve().parents[1]
BASE_TOML = ROOT / "configs" / "base.toml"
# first verified build of the reference persistence config
BASE_LAMBDA = -0.4397005409812932


def run(tmp_path, *args, out="out"):
    target = tmp_path / out
    return cli.run([*args, "--out", str(target)]), target


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_eigen_reference_config(tmp_path):
    status, out = run(tmp_path, "eigen", "--config", str(BASE_TOML))
    assert status == 0
    info = json.loads((out / "eigen.json").read_text())
    assert info["lambda_inf"] < 0
    assert info["lambda_inf"] == pytest.approx(BASE_LAMBDA, abs=1e-9)
    assert info["converged"] and len(info["ladder"]) >= 2
    assert (out / "fields" / "eigen_road.csv").read_text().startswith("x,phi\n")
    assert (out / "fields" / "eigen_field.csv").read_text().startswith("x,y,psi\n")


def test_manifest_lists_every_output_with_digest(tmp_path):
    status, out = run(tmp_path, "eigen", "--config", str(BASE_TOML))
    m = manifest(out)
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    assert sorted(e["path"] for e in m["outputs"]) == files
    for e in m["outputs"]:
        assert hashlib.sha256((out / e["path"]).read_bytes()).hexdigest() == e["sha256"]
    assert m["version"] and m["wall_clock_seconds"] >= 0
    # every numerics default is echoed, including resolved automatic values
    assert isinstance(m["resolved_config"]["numerics"]["X0"], float)
    assert m["resolved_config"]["numerics"]["dt"] == "auto"


def test_outputs_are_deterministic_and_replayable(tmp_path):
    _, a = run(tmp_path, "eigen", "--config", str(BASE_TOML), out="a")
    _, b = run(tmp_path, "eigen", "--config", str(BASE_TOML), out="b")
    _, c = run(tmp_path, "eigen", "--config", str(a / "manifest.json"), out="c")
    digests = [manifest(x)["outputs"] for x in (a, b, c)]
    assert digests[0] == digests[1] == digests[2]


def test_missing_niche_kind_is_configuration_error(tmp_path, capsys):
    status, out = run(tmp_path, "sweep", "--axis", "L", "--values", "-2:8:21")
    assert status == 2
    assert "niche.kind" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(BASE_TOML.read_text().replace("mu = 1.0", "mu = 1.0\nmuu = 2.0"))
    status, _ = run(tmp_path, "eigen", "--config", str(cfg))
    assert status == 2
    assert "parameters.muu" in capsys.readouterr().err


def test_malformed_toml(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[parameters\nD = 1")
    assert run(tmp_path, "eigen", "--config", str(cfg))[0] == 2


def test_threshold_needs_rest_frame(tmp_path, capsys):
    status, _ = run(tmp_path, "threshold-d", "--config", str(BASE_TOML))
    assert status == 2
    assert "c = 0" in capsys.readouterr().err


def test_flags_override_file(tmp_path):
    status, out = run(tmp_path, "eigen-no-road", "--config", str(BASE_TOML),
                      "--set", "parameters.c=0.0", "--jobs", "1")
    assert status == 0
    cfg = manifest(out)["resolved_config"]
    assert cfg["parameters"]["c"] == 0.0
    assert json.loads((out / "eigen.json").read_text())["kind"] == "neumann"


def test_computation_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise SolverError("no convergence in stage eigen")

    monkeypatch.setattr(an, "evaluate", boom)
    assert run(tmp_path, "eigen", "--config", str(BASE_TOML))[0] == 1
    assert "no convergence" in capsys.readouterr().err


def test_simulate_writes_classification(tmp_path):
    status, out = run(tmp_path, "simulate", "--config", str(BASE_TOML),
                      "--set", "numerics.stride=400", "--set", "numerics.horizon=50")
    assert status == 0
    report = json.loads((out / "classification.json").read_text())
    assert report["verdict"] in ("persistence", "extinction", "undetermined")
    assert (out / "fields" / "trajectory_field.csv").read_text().startswith("t,x,y,value\n")


def test_critical_speed_tables(tmp_path):
    status, out = run(tmp_path, "critical-speed", "--config", str(BASE_TOML))
    assert status == 0
    pair = json.loads((out / "tables" / "critical_speed.json").read_text())
    assert 0 < pair["c_star"] <= pair["c_star_upper"] <= pair["bound"] + 1e-2
    scan = (out / "tables" / "critical_speed_scan.csv").read_text().splitlines()
    assert scan[0] == "c,lambda,converged" and len(scan) == 22


def test_sweep_csv(tmp_path):
    status, out = run(tmp_path, "sweep", "--config", str(BASE_TOML), "--axis", "c",
                      "--values", "0:1:3")
    assert status == 0
    lines = (out / "tables" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "axis,value,lambda,lambda_neumann,converged"
    assert len(lines) == 4


def test_verify_single_check(tmp_path):
    status, out = run(tmp_path, "verify", "--check", "shift-identity")
    assert status == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["passed"]


def test_verify_unknown_check(tmp_path):
    assert run(tmp_path, "verify", "--check", "nope")[0] == 2


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "roadfield.cli", "eigen", "--config",
                           str(BASE_TOML), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "lambda_inf" in proc.stdout


def test_parallel_scan_matches_serial(tmp_path):
    _, a = run(tmp_path, "critical-speed", "--config", str(BASE_TOML), out="serial")
    _, b = run(tmp_path, "critical-speed", "--config", str(BASE_TOML), "--jobs", "2", out="par")
    assert manifest(a)["outputs"] == manifest(b)["outputs"]
