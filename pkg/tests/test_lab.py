from __future__ import annotations

import json

import numpy as np
import pytest

from oubv import lab
from oubv.gaussian import build_grid
from oubv.geometry import interval_body
from oubv.report import read_csv


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# desk check\ndim = 1\nh = 0.0078125\nnt = 5\nlambdas = 1, 2\ngeometric = no\n")
    vals = lab.read_config_file(p)
    cfg = lab.make_config("theorem-check", vals, nt=7, h=None)
    assert cfg.h == 0.0078125 and cfg.nt == 7 and cfg.lambdas == (1.0, 2.0) and cfg.geometric is False
    assert np.allclose(np.diff(cfg.ladder()), np.diff(cfg.ladder())[0])
    p.write_text("bogus = 3\n")
    with pytest.raises(ValueError):
        lab.read_config_file(p)
    with pytest.raises(ValueError):
        lab.make_config("nonsense")


def test_parse_initial_kinds(tmp_path):
    g = build_grid(1, 2.0, 0.25)
    u, jumps, a = lab.parse_initial("step:0.5", g)
    assert a == 0.5 and jumps[0].height == 1.0
    assert set(np.unique(u.values)) == {0.0, 0.5, 1.0}
    u, jumps, a = lab.parse_initial("poly:1,0,2", g)
    assert np.allclose(u.values, 1 + 2 * g.axis**2) and a is None and not jumps
    assert np.all(lab.parse_initial("const:4", g)[0].values == 4.0)
    with pytest.raises(ValueError):
        lab.parse_initial("wiggle", g)


def test_jump_gap():
    assert lab.jump_boundary_gap(interval_body(-1, 1), 0.99) == pytest.approx(0.01)
    assert lab.jump_boundary_gap(interval_body(-1, 1), 1.5) < 0


def _theorem_args(out, *extra):
    return ["theorem-check", "--h", "0.00390625", "--tmin", "0.002", "--nt", "6", "--out", str(out), *extra]


def test_cli_theorem_check_outputs(tmp_path, capsys):
    assert lab.main(_theorem_args(tmp_path)) == 0
    assert "all verdicts pass" in capsys.readouterr().out
    first = (tmp_path / "trace.csv").read_text().splitlines()
    assert first[0] == "# seed=0"
    assert first[1] == "t,F_t,reference,err_estimate,mass_drift,contraction_margin,h"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] and all("margin" in v and v["criterion"] for v in report["verdicts"])
    assert report["environment"]["h"] == 0.00390625
    assert (tmp_path / "plot_trace.py").read_text().startswith('"""Plot F(t)')
    assert not list(tmp_path.glob("*.png"))
    assert "CG" in (tmp_path / "solver.log").read_text() or "trace" in (tmp_path / "solver.log").read_text()


def test_cli_constant_datum(tmp_path):
    assert lab.main(_theorem_args(tmp_path, "--u0", "const:1.5")) == 0
    _, rows = read_csv(tmp_path / "trace.csv")
    assert all(float(r[1]) < 1e-9 for r in rows)


def test_guard_rail_warning(tmp_path):
    cfg = lab.make_config("theorem-check", h=2**-8, tmin=0.01, nt=3, u0="step:0.99", out=str(tmp_path))
    with pytest.warns(lab.BoundaryJumpWarning):
        rep = lab.run_theorem_check(cfg)
    assert rep.warnings and "10h" in rep.warnings[0]


def test_error_names_failing_operation(tmp_path, capsys):
    assert lab.main(_theorem_args(tmp_path, "--tmin", "1e-6")) == 2
    assert "variation_trace" in capsys.readouterr().err
    assert lab.main(_theorem_args(tmp_path, "--domain", "polygon:5")) == 2
    assert "build_body" in capsys.readouterr().err


def test_failing_verdict_gives_exit_one(tmp_path):
    assert lab.main(_theorem_args(tmp_path, "--limit-tol", "0.0")) == 1


def test_config_file_via_cli(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"h = 0.0078125\ntmin = 0.01\nnt = 3\nout = {tmp_path / 'a'}\n")
    assert lab.main(["theorem-check", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "trace.csv").exists() and not (tmp_path / "a").exists()


def test_domain_convergence_small(tmp_path):
    cfg = lab.make_config("domain-convergence", faces="4:6", lambdas=(1.0,), h=2**-5, out=str(tmp_path))
    rep = lab.run_domain_convergence(cfg)
    assert rep.passed
    cols, rows = read_csv(tmp_path / "convergence.csv")
    assert cols[:4] == ["lambda", "m", "delta", "w12_error"] and len(rows) == 3
    assert (tmp_path / "plot_convergence.py").exists()


def test_mehler_oracle_coarse(tmp_path):
    cfg = lab.make_config("mehler-oracle", h=2**-7, oracle_u0=("x", "sign"), out=str(tmp_path))
    rep = lab.run_mehler_oracle(cfg)
    assert rep.passed and len(rep.verdicts) == 2
