"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from oubv import lab, suite
from oubv.gaussian import gaussian_density
from oubv.report import Report, read_csv

TWO_G0 = 0.7978846


def test_criterion_01_theorem_check_1d(tmp_path, acceptance):
    cfg = lab.make_config("theorem-check", dim=1, domain="interval:-1,1", u0="sign", h=2.0**-10, L=8.0,
                          tmin=1e-3, tmax=1.0, nt=24, out=str(tmp_path))
    rep = lab.run_theorem_check(cfg)
    cols, rows = read_csv(tmp_path / "trace.csv")
    t = np.array([float(r[0]) for r in rows])
    F = np.array([float(r[1]) for r in rows])
    eps = np.array([float(r[3]) for r in rows])
    assert len(t) == 24 and t[0] == pytest.approx(1e-3) and t[-1] == pytest.approx(1.0)
    mono = float(np.min(F[:-1] + eps[:-1] - F[1:]))
    upper = float(np.min(TWO_G0 * 1.01 - F))
    limit = abs(F[0] - TWO_G0) / TWO_G0
    ok = mono >= 0 and upper >= 0 and limit <= 0.03 and rep.passed
    acceptance(1, "d=1 desk check", ok,
               f"monotone margin {mono:.3g}, upper margin {upper:.3g}, |F(1e-3)/ref-1|={limit:.4f}")
    assert ok


def test_criterion_02_theorem_check_2d(tmp_path, acceptance):
    h = 2.0**-7
    cfg = lab.make_config("theorem-check", dim=2, domain="ball:1", smooth=0.05, u0="sign", h=h,
                          tmin=(10 * h) ** 2, tmax=1.0, nt=12, limit_tol=0.06, out=str(tmp_path))
    rep = lab.run_theorem_check(cfg)
    ref = 2 * quad(lambda y: gaussian_density(np.array([0.0, y])), -1, 1, epsabs=1e-13)[0]
    assert ref == pytest.approx(0.5447, abs=1e-4)
    F = np.array([r["F_t"] for r in rep.rows])
    eps = np.array([r["err_estimate"] for r in rep.rows])
    mono = float(np.min(F[:-1] + eps[:-1] - F[1:]))
    limit = abs(F[0] - ref) / ref
    ok = mono >= 0 and limit <= 0.06
    acceptance(2, "d=2 smoothed disk desk check", ok,
               f"monotone margin {mono:.3g}, F(tmin)={F[0]:.5f} vs {ref:.5f} ({limit:.2%})")
    assert ok


def test_criterion_03_mehler_oracle(tmp_path, acceptance):
    cfg = lab.make_config("mehler-oracle", h=2.0**-10, L=8.0, t=0.5, oracle_u0=("x", "x2", "sign"),
                          out=str(tmp_path))
    rep = lab.run_mehler_oracle(cfg)
    errs = {r["u0"]: r["l2_error"] for r in rep.rows}
    ok = set(errs) == {"x", "x2", "sign"} and all(e <= 1e-3 for e in errs.values())
    acceptance(3, "Mehler oracle", ok, ", ".join(f"{k}: {v:.2e}" for k, v in errs.items()))
    assert ok


def test_criterion_04_semigroup_properties(acceptance):
    rep = Report("acceptance", {})
    rows = suite.semigroup_properties(rep, seed=2024, n_pairs=50)
    assert len(rows) == 50
    drift = max(r["mass_drift"] for r in rows)
    ok = rep.passed and drift <= 1e-10
    acceptance(4, "semigroup law / symmetry / contraction / mass on 50 pairs", ok,
               "; ".join(f"{v.name} {v.margin:.2e}" for v in rep.verdicts) + f"; max drift {drift:.1e}")
    assert ok


def test_criterion_05_em_contraction(acceptance):
    rep = Report("acceptance", {})
    rows = suite.em_contraction(rep, seed=2024, n_fields=25, boxes=(0.5, 1.0, 2.0))
    assert len(rows) == 75
    ok = rep.passed
    acceptance(5, "E_1 contraction on 25 fields x 3 nested boxes", ok, f"worst margin {rep.verdicts[0].margin:.3g}")
    assert ok


def test_criterion_06_integration_by_parts(acceptance):
    rows = suite.ibp_residuals(exponents=(6, 7, 8, 9, 10))
    order = suite.fitted_order(rows)
    ok = all(r["residual"] <= suite.IBP_C * r["h"] for r in rows) and order >= 0.9
    acceptance(6, "integration by parts", ok, f"fitted order {order:.3f}, C={suite.IBP_C}")
    assert ok


def test_criterion_07_convex_geometry(acceptance):
    rep = Report("acceptance", {})
    rows = suite.geometry_check(rep, seed=2024, deltas=(0.2, 0.1, 0.05, 0.025))
    collars = [r["gamma_collar"] for r in rows if r["kind"] == "smoothing"]
    grad = min(r["grad_lower_bound"] for r in rows if r["kind"] == "smoothing")
    ok = rep.passed and all(a > b for a, b in zip(collars, collars[1:])) and grad > 0
    acceptance(7, "convex geometry", ok, f"collars {[round(c, 4) for c in collars]}, min |grad m| {grad:.3f}")
    assert ok


def test_criterion_08_domain_convergence(tmp_path, acceptance):
    cfg = lab.make_config("domain-convergence", target="ball:1", faces="4:12", lambdas=(0.5, 1.0, 2.0),
                          out=str(tmp_path))
    rep = lab.run_domain_convergence(cfg)
    ok = True
    for lam in (0.5, 1.0, 2.0):
        errs = [r["w12_error"] for r in rep.rows if r["lambda"] == lam]
        assert [r["m"] for r in rep.rows if r["lambda"] == lam] == list(range(4, 13))
        ok &= all(a > b for a, b in zip(errs, errs[1:]))
    hd = [r["hausdorff"] for r in rep.rows if r["lambda"] == 0.5]
    ok &= all(a > b for a, b in zip(hd, hd[1:]))
    acceptance(8, "domain convergence m=4..12", ok,
               "; ".join(f"{v.name.split('[')[-1].rstrip(']')}: {v.margin:.2e}" for v in rep.verdicts))
    assert ok


def test_criterion_09_meyers_serrin(acceptance):
    rep = Report("acceptance", {})
    rows = suite.meyers_serrin_check(rep, eps_list=(0.1, 0.05, 0.02))
    ok = rep.passed and all(r["l2_distance"] < r["eps"] for r in rows)
    ok &= all(abs(r["variation"] - r["reference"]) < r["eps"] * math.exp(r["eps"] * r["cutoff_radius"] + r["eps"] ** 2 / 2)
              for r in rows)
    acceptance(9, "Meyers-Serrin approximation", ok, "; ".join(f"{v.name}: {v.margin:.2e}" for v in rep.verdicts))
    assert ok


def test_criterion_10_determinism(tmp_path, acceptance):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert lab.main(["theorem-check", "--h", str(2.0**-8), "--tmin", "0.01", "--nt", "8",
                         "--seed", "17", "--out", str(out)]) == 0
        assert lab.main(["property-suite", "--seed", "17", "--n-pairs", "10", "--n-fields", "5",
                         "--out", str(out / "suite")]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert len(files) >= 6
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    seeded = all((outs[0] / f).read_text().startswith("# seed=17\n") for f in files)
    ok = same and seeded
    acceptance(10, "determinism", ok, f"{len(files)} CSV files byte-identical across runs")
    assert ok
