import dataclasses
import shutil
from pathlib import Path

import numpy as np
import pytest

from cdml import cli
from cdml.io import read_curve_csv, read_report

DEMO = Path(__file__).resolve().parents[1] / "demo"


@pytest.fixture
def workdir(tmp_path):
    shutil.copy(DEMO / "toy.csv", tmp_path / "toy.csv")
    return tmp_path


def _config(workdir, extra="", llr='h = 0.15\ngrid_points = 41'):
    text = f"""
seed = 7
[data]
path = "toy.csv"
y = "y"
d = "d"
z = ["z1", "z2"]
v = ["z1"]
[functional]
kind = "cate_binary"
[learner]
degree = 3
knots = [0.25, 0.5, 0.75]
lambda = 1e-6
[riesz]
method = "auto"
lambda = 0.0
{extra}
[llr]
{llr}
"""
    p = workdir / "run.toml"
    p.write_text(text)
    return p


def test_estimate_writes_curve_and_report(workdir, capsys):
    cfg = _config(workdir)
    assert cli.main(["estimate", str(cfg), "--output", str(workdir / "out")]) == 0
    curve = read_curve_csv(workdir / "out" / "curve.csv")
    assert len(curve["theta_hat"]) == 41
    assert (workdir / "out" / "curve.csv").read_text().count("\n") == 42
    rep = read_report(workdir / "out" / "report.json")
    assert rep["n"] == 1000 and rep["bandwidth"]["h"] == 0.15
    assert "theta_hat" in capsys.readouterr().out


def test_estimate_is_byte_reproducible(workdir):
    cfg = _config(workdir, llr="grid_points = 11")
    assert cli.main(["estimate", str(cfg), "--output", str(workdir / "o1")]) == 0
    assert cli.main(["estimate", str(cfg), "--output", str(workdir / "o2")]) == 0
    for name in ("report.json", "curve.csv"):
        assert (workdir / "o1" / name).read_bytes() == (workdir / "o2" / name).read_bytes()


def test_unknown_config_key_exits_2(workdir, capsys):
    cfg = _config(workdir, llr="bandwith = 0.2")
    assert cli.main(["estimate", str(cfg)]) == 2
    assert "llr.bandwith: Extra inputs are not permitted" in capsys.readouterr().err


def test_missing_file_and_bad_arguments_exit_2(workdir):
    assert cli.main(["estimate", str(workdir / "nope.toml")]) == 2
    assert cli.main(["simulate", "--reps", "0"]) == 2
    assert cli.main(["simulate", "--n-list", "1,x"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_missing_column_exits_2(workdir):
    cfg = _config(workdir)
    cfg.write_text(cfg.read_text().replace('y = "y"', 'y = "outcome"'))
    assert cli.main(["estimate", str(cfg)]) == 2


def test_singular_first_step_exits_3(workdir, capsys):
    cfg = _config(workdir, extra="[riesz.dictionary]\ndegree = 40\ntreatment = \"split\"")
    assert cli.main(["estimate", str(cfg), "--output", str(workdir / "o")]) == 3
    err = capsys.readouterr().err
    assert "numerical failure in stage crossfit (fold 1)" in err


def test_invariant_breach_exits_4(workdir, monkeypatch):
    from cdml import engine

    real = engine.estimate_theta

    def corrupt(*args, **kwargs):
        rep = real(*args, **kwargs)
        flags = ("low_mass",) + rep.curve.flags[1:]
        return dataclasses.replace(rep, curve=dataclasses.replace(rep.curve, flags=flags))

    monkeypatch.setattr(engine, "estimate_theta", corrupt)
    cfg = _config(workdir, llr="h = 0.2\ngrid_points = 5")
    assert cli.main(["estimate", str(cfg), "--output", str(workdir / "o")]) == 4


def test_simulate_all_checks_small(tmp_path, capsys):
    out = tmp_path / "sim"
    code = cli.main(
        ["simulate", "--dgp", "a", "--check", "all", "--n-list", "200,400", "--n", "400", "--reps", "2",
         "--threads", "1", "--output", str(out)]
    )
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if ": PASS" in l or ": FAIL" in l]
    assert [l.split(":")[0] for l in lines] == ["equivalence", "orthogonality", "rates", "coverage"]
    rep = read_report(out / "report.json")
    assert set(rep["checks"]) == {"equivalence", "orthogonality", "rates", "coverage"}
    header = (out / "reps.csv").read_text().splitlines()[0]
    assert header == "check,n,rep,quantity,value"


def test_simulate_orthogonality_pass_line(tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main(["simulate", "--dgp", "a", "--check", "orthogonality", "--reps", "50", "--threads", "1",
                     "--output", str(out)])
    assert code == 0
    rep = read_report(out / "report.json")["checks"]["orthogonality"]
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("orthogonality:")][0]
    within = abs(rep["joint_slope"] - 2.0) <= 0.3
    assert ("PASS" in line) == (within and rep["passed"]) and np.isfinite(rep["joint_slope"])
    assert within


def test_simulate_from_demo_config_overrides(tmp_path):
    out = tmp_path / "s"
    code = cli.main(
        ["simulate", "--config", str(DEMO / "simulate.toml"), "--check", "orthogonality", "--n", "500",
         "--reps", "2", "--threads", "1", "--output", str(out)]
    )
    assert code == 0
    rep = read_report(out / "report.json")
    assert rep["config"]["seed"] == 3 and list(rep["checks"]) == ["orthogonality"]


def test_diagnose_marks_output_heuristic(workdir, capsys):
    cfg = _config(workdir, llr="h = 0.2\ngrid_points = 5")
    assert cli.main(["diagnose", str(cfg), "--reps", "2", "--output", str(workdir / "d")]) == 0
    rep = read_report(workdir / "d" / "diagnose.json")
    assert rep["heuristic"] is True
    assert "HEURISTIC" in capsys.readouterr().out


def test_version_flag(capsys):
    assert cli.main(["--version"]) == 0
    assert "cdml" in capsys.readouterr().out
