"""Experiment orchestration and the ``oubv`` command line."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import bv
from . import neumann as nm
from . import suite
from .gaussian import (GaussianGrid, ScalarField, build_grid, l2_norm, mehler_apply, read_field_csv)
from .geometry import (BallBody, ConvexBody, boundary_points, cylindrical_approximation,
                       hausdorff_boundary_distance, interval_body, parse_domain,
                       regular_polygon_halfspaces, smooth_body)
from .report import (CONVERGENCE_PLOT, TRACE_PLOT, Report, environment, write_csv,
                     write_plot_script)

# Absolute slack for verdicts whose reference may be exactly zero (round-off floor).
ABS_FLOOR = 1e-9

EXPERIMENTS = ("theorem-check", "domain-convergence", "mehler-oracle", "property-suite")


class ExperimentError(RuntimeError):
    """A constituent operation rejected the configuration."""


class BoundaryJumpWarning(UserWarning):
    """The initial jump set comes within a few cells of the boundary."""


@dataclass
class ExperimentConfig:
    experiment: str = "theorem-check"
    dim: int = 1
    domain: str = "interval:-1,1"
    smooth: float = 0.0
    u0: str = "sign"
    L: float | None = None
    h: float | None = None
    tmin: float = 1e-3
    tmax: float = 1.0
    nt: int = 24
    geometric: bool = True
    c_disc: float = 1.0
    upper_tol: float = 0.01
    limit_tol: float = 0.03
    target: str = "ball:1"
    faces: str = "4:12"
    lambdas: tuple[float, ...] = (0.5, 1.0, 2.0)
    delta_scale: float = 0.2
    f: str = "linear"
    t: float = 0.5
    oracle_u0: tuple[str, ...] = ("x", "x2", "sign")
    oracle_tol: float = 1e-3
    n_pairs: int = 50
    n_fields: int = 25
    deltas: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    eps: tuple[float, ...] = (0.1, 0.05, 0.02)
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if self.h is not None and not self.h > 0:
            raise ValueError("h must be positive")

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    def ladder(self) -> np.ndarray:
        if self.nt < 1 or not 0 < self.tmin <= self.tmax:
            raise ValueError("time ladder needs 0 < tmin <= tmax and nt >= 1")
        if self.nt == 1:
            return np.array([self.tmin])
        t = np.geomspace(self.tmin, self.tmax, self.nt) if self.geometric else np.linspace(self.tmin, self.tmax, self.nt)
        if np.any(np.diff(t) <= 0):
            raise ValueError("time ladder is not strictly increasing")
        return t


def _convert(f: dataclasses.Field, raw: str):
    tp = str(f.type)
    raw = raw.strip()
    if tp.startswith("tuple"):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(parts) if "str" in tp else tuple(float(p) for p in parts)
    if "None" in tp and raw.lower() in ("", "none", "auto"):
        return None
    if tp.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: not a boolean: {raw!r}")
    if tp.startswith("int"):
        return int(raw)
    if tp.startswith("float"):
        return float(raw)
    return raw


FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in FIELDS:
            raise ValueError(f"{path}:{n}: expected key=value with a known key, got {line!r}")
        out[key] = _convert(FIELDS[key], val)
    return out


def make_config(experiment: str, file_values: dict | None = None, **overrides) -> ExperimentConfig:
    vals = dict(file_values or {})
    vals.update({k: v for k, v in overrides.items() if v is not None})
    vals["experiment"] = experiment
    return ExperimentConfig(**vals)


# ------------------------------------------------------------ helpers

@contextmanager
def stage(name: str) -> Iterator[None]:
    """Re-raise configuration errors with the failing operation's name."""
    try:
        yield
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        if isinstance(exc, ExperimentError):
            raise
        raise ExperimentError(f"{name}: {exc}") from exc


@contextmanager
def solver_log(path: Path) -> Iterator[None]:
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
    logger = logging.getLogger("oubv")
    old = logger.level
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    try:
        yield
    finally:
        logger.removeHandler(handler)
        logger.setLevel(old)
        handler.close()


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_body(cfg: ExperimentConfig, spec: str | None = None) -> ConvexBody:
    body = parse_domain(spec or cfg.domain, cfg.dim)
    if cfg.smooth > 0:
        body = smooth_body(body, cfg.smooth)
    return body


def grid_for(body: ConvexBody, dim: int, h: float, L: float | None) -> GaussianGrid:
    """Grid covering the body (or the default Gaussian box when unbounded)."""
    if L is None:
        ext = body.ray_exit(np.vstack([np.eye(dim), -np.eye(dim)]))
        pts = boundary_points(body, 4096)
        if np.all(np.isfinite(ext)) and len(pts):
            reach = float(np.max(np.abs(pts)))
            L = min(reach + 4 * h, {1: 8.0, 2: 6.0, 3: 6.0}[dim])
    return build_grid(dim, L, h)


def parse_initial(spec: str, grid: GaussianGrid) -> tuple[ScalarField, list[bv.Jump], float | None]:
    """Initial datum acting on the first coordinate.

    ``sign | step:a | linear | poly:c0,c1,c2 | const:c | file:path.csv``.
    Returns the field, its jump interfaces and the hyperplane position
    ``x_1 = a`` of the jump (``None`` for continuous data).
    """
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    x1 = grid.coords[0]
    extent = 2.0 * grid.L * math.sqrt(grid.dim)

    def plane_jump(a: float, height: float) -> bv.Jump:
        if grid.dim == 1:
            return bv.Jump(a, height)
        return bv.Jump([[a, -extent], [a, extent]], height)

    if kind == "sign":
        return ScalarField(grid, np.sign(x1)), [plane_jump(0.0, 2.0)], 0.0
    if kind == "step":
        a = float(arg)
        return ScalarField(grid, 0.5 * (1.0 + np.sign(x1 - a))), [plane_jump(a, 1.0)], a
    if kind in ("linear", "x"):
        return ScalarField(grid, x1), [], None
    if kind == "x2":
        return ScalarField(grid, x1**2), [], None
    if kind == "poly":
        c = [float(v) for v in arg.split(",")]
        return ScalarField(grid, np.polyval(c[::-1], x1)), [], None
    if kind == "const":
        return ScalarField(grid, np.full(grid.shape, float(arg))), [], None
    if kind == "file":
        return read_field_csv(arg, grid), [], None
    raise ValueError(f"unknown initial datum {spec!r}")


def jump_boundary_gap(body: ConvexBody, a: float) -> float:
    """Distance from the hyperplane ``x_1 = a`` to the nearest supporting hyperplane
    of the body orthogonal to ``e_1`` (infinite when the body is unbounded along ``x_1``)."""
    e = np.zeros(body.dim)
    e[0] = 1.0
    s = body.ray_exit(np.vstack([e, -e]))
    if body.dim == 1:
        hi, lo = body.center[0] + s[0], body.center[0] - s[1]
    else:
        pts = boundary_points(body, 4096)
        if not np.all(np.isfinite(s)) or not len(pts):
            return math.inf
        hi, lo = float(pts[:, 0].max()), float(pts[:, 0].min())
    return float(min(hi - a, a - lo))


# ------------------------------------------------------------ runners

def run_theorem_check(cfg: ExperimentConfig) -> Report:
    out = _out_dir(cfg)
    rep = Report("theorem-check", cfg.echo())
    h = cfg.h if cfg.h is not None else (2.0**-10 if cfg.dim == 1 else 2.0**-7)
    with solver_log(out / "solver.log"):
        with stage("build_body"):
            body = build_body(cfg)
        with stage("build_grid"):
            L = cfg.L if cfg.L is not None else (8.0 if cfg.dim == 1 else None)
            grid = grid_for(body, cfg.dim, h, L)
        with stage("assemble_dirichlet_form"):
            op = nm.assemble_dirichlet_form(grid, body)
        with stage("parse_initial"):
            u0, jumps, a = parse_initial(cfg.u0, grid)
        if a is not None:
            gap = jump_boundary_gap(body, a)
            if gap < 0:
                raise ExperimentError("variation_trace: the jump of u0 lies outside the domain")
            if gap < 10 * grid.h:
                msg = (f"jump of u0 at x1={a:g} lies within 10h={10 * grid.h:.3g} of the boundary; "
                       "the hypothesis that the boundary carries no variation is at numerical risk")
                warnings.warn(msg, BoundaryJumpWarning, stacklevel=2)
                rep.warnings.append(msg)
        if jumps and cfg.dim > 2:
            jumps = []
            rep.warnings.append("jump variation is closed-form only for d <= 2; using the Sobolev estimate")
        with stage("variation_trace"):
            trace = nm.variation_trace(op, u0, cfg.ladder(), jumps=jumps or None, C=cfg.c_disc)
    ref = trace.reference
    rows = trace.rows()
    write_csv(out / "trace.csv", nm.CSV_COLUMNS, rows, cfg.seed)
    write_plot_script(out / "plot_trace.py", TRACE_PLOT, "trace.csv")
    rep.rows = [dict(zip(nm.CSV_COLUMNS, r)) for r in rows]
    rep.outputs = ["trace.csv", "plot_trace.py", "solver.log", "report.json"]

    mono = trace.monotonicity_margins()
    rep.add("theorem-check", "F nonincreasing within eps_disc", float(mono.min()) if mono.size else 0.0,
            f"{len(trace.times)} times")
    rep.add("theorem-check", "F <= reference*(1+upper_tol)",
            float(np.min(ref * (1 + cfg.upper_tol) + ABS_FLOOR - trace.values)),
            f"reference={ref:.7g}, upper_tol={cfg.upper_tol:g}")
    f0 = float(trace.values[0])
    rep.add("theorem-check", "F(tmin) close to reference",
            cfg.limit_tol * ref + ABS_FLOOR - abs(f0 - ref),
            f"F(tmin)={f0:.7g}, limit_tol={cfg.limit_tol:g}")
    rep.environment = environment(h=grid.h, L=grid.L, nodes=op.n, tail=grid.tail, c_disc=cfg.c_disc,
                                  t_min_resolvable=nm.min_time(grid.h), cg_rtol=nm.CG_RTOL)
    rep.write_json(out / "report.json")
    return rep


def _parse_faces(spec: str) -> list[int]:
    lo, _, hi = spec.partition(":")
    ms = list(range(int(lo), int(hi) + 1)) if hi else [int(v) for v in lo.split(",")]
    if len(ms) < 2 or min(ms) < 3:
        raise ValueError("need at least two polygon sizes, each >= 3")
    return ms


CONVERGENCE_COLUMNS = ("lambda", "m", "delta", "w12_error", "hausdorff", "hausdorff_resolution",
                       "gamma_gap", "h")


def run_domain_convergence(cfg: ExperimentConfig) -> Report:
    """Disk (or other target) against smoothed circumscribed regular m-gons."""
    out = _out_dir(cfg)
    rep = Report("domain-convergence", cfg.echo())
    dim = 2
    h = cfg.h if cfg.h is not None else 2.0**-6
    with solver_log(out / "solver.log"):
        with stage("build_body"):
            target = parse_domain(cfg.target, dim)
            ms = _parse_faces(cfg.faces)
            radius = target.radius if isinstance(target, BallBody) else target.inradius
            approx = {m: cylindrical_approximation(regular_polygon_halfspaces(m, radius), m,
                                                   cfg.delta_scale * radius / m, center=target.center)
                      for m in ms}
        with stage("build_grid"):
            grid = grid_for(approx[ms[0]], dim, h, cfg.L)
            R = grid.L * math.sqrt(dim)
        with stage("assemble_dirichlet_form"):
            op = nm.assemble_dirichlet_form(grid, target)
            ops = {m: nm.assemble_dirichlet_form(grid, b) for m, b in approx.items()}
        with stage("parse_initial"):
            f, _, _ = parse_initial(cfg.f, grid)
        geo = {}
        with stage("hausdorff_boundary_distance"):
            for m, b in approx.items():
                hd = hausdorff_boundary_distance(b, target, R)
                gap = float(np.sum(grid.weights[ops[m].mask & ~op.mask]))
                geo[m] = (hd, gap)
        rows = []
        with stage("solve_resolvent"):
            for lam in cfg.lambdas:
                u = nm.solve_resolvent(op, lam, f)
                for m in ms:
                    um = nm.solve_resolvent(ops[m], lam, f.restrict(ops[m].mask))
                    err = nm.w12_distance(um, u, target)
                    hd, gap = geo[m]
                    rows.append((float(lam), m, approx[m].delta, err, hd.value, hd.resolution, gap, grid.h))
    write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, rows, cfg.seed)
    write_plot_script(out / "plot_convergence.py", CONVERGENCE_PLOT, "convergence.csv")
    rep.rows = [dict(zip(CONVERGENCE_COLUMNS, r)) for r in rows]
    rep.outputs = ["convergence.csv", "plot_convergence.py", "solver.log", "report.json"]
    for lam in cfg.lambdas:
        errs = np.array([r[3] for r in rows if r[0] == lam])
        rep.add("domain-convergence", f"W12 error strictly decreasing [lambda={lam:g}]",
                float(np.min(-np.diff(errs))), " > ".join(f"{e:.4g}" for e in errs))
    hds = np.array([geo[m][0].value for m in ms])
    rep.add("domain-convergence", "Hausdorff distance strictly decreasing", float(np.min(-np.diff(hds))),
            " > ".join(f"{d:.4g}" for d in hds))
    gaps = np.array([geo[m][1] for m in ms])
    rep.add("domain-convergence", "gamma(Omega_m minus Omega) nonincreasing", float(np.min(-np.diff(gaps))),
            " >= ".join(f"{g:.4g}" for g in gaps))
    rep.environment = environment(h=grid.h, L=grid.L, nodes=op.n, cg_rtol=nm.CG_RTOL,
                                  hausdorff_resolution=max(g[0].resolution for g in geo.values()))
    rep.write_json(out / "report.json")
    return rep


ORACLE_COLUMNS = ("u0", "t", "l2_error", "tolerance", "h")


def run_mehler_oracle(cfg: ExperimentConfig) -> Report:
    """Neumann evolution on ``(-L, L)`` against the whole-line Mehler formula."""
    out = _out_dir(cfg)
    rep = Report("mehler-oracle", cfg.echo())
    h = cfg.h if cfg.h is not None else 2.0**-10
    L = cfg.L if cfg.L is not None else 8.0
    rows = []
    with solver_log(out / "solver.log"):
        with stage("build_grid"):
            grid = build_grid(1, L, h)
            body = interval_body(-grid.L, grid.L)
        with stage("assemble_dirichlet_form"):
            op = nm.assemble_dirichlet_form(grid, body)
        for spec in cfg.oracle_u0:
            with stage("parse_initial"):
                u0, _, _ = parse_initial(spec, grid)
            with stage("evolve_semigroup"):
                a = nm.evolve_semigroup(op, u0, cfg.t)
            with stage("mehler_apply"):
                b = mehler_apply(u0, cfg.t)
            err = l2_norm(a.with_values(a.values - b.values))
            rows.append((spec, float(cfg.t), err, cfg.oracle_tol, grid.h))
            rep.add("mehler-oracle", f"L2 distance to Mehler [u0={spec}]", cfg.oracle_tol - err)
    write_csv(out / "oracle.csv", ORACLE_COLUMNS, rows, cfg.seed)
    rep.rows = [dict(zip(ORACLE_COLUMNS, r)) for r in rows]
    rep.outputs = ["oracle.csv", "solver.log", "report.json"]
    rep.environment = environment(h=grid.h, L=grid.L, tail=grid.tail, nodes=op.n)
    rep.write_json(out / "report.json")
    return rep


def _table(rows: Sequence[dict]) -> tuple[list[str], list[list]]:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return cols, [[r.get(c, "") for c in cols] for r in rows]


def run_property_suite(cfg: ExperimentConfig) -> Report:
    out = _out_dir(cfg)
    rep = Report("property-suite", cfg.echo())
    tables = {}
    with solver_log(out / "solver.log"):
        with stage("semigroup_properties"):
            tables["semigroup"] = suite.semigroup_properties(rep, cfg.seed, cfg.n_pairs)
            tables["semigroup"].append(dict(case="cylinder", **suite.cylinder_crosscheck(rep)))
        with stage("conditional_expectation"):
            tables["conditional_expectation"] = suite.em_contraction(rep, cfg.seed, cfg.n_fields)
        with stage("integration_by_parts"):
            tables["integration_by_parts"] = suite.ibp_check(rep)
        with stage("convex_geometry"):
            tables["geometry"] = suite.geometry_check(rep, cfg.seed, cfg.deltas)
        with stage("meyers_serrin_approximate"):
            tables["meyers_serrin"] = suite.meyers_serrin_check(rep, cfg.eps)
    for name, rows in tables.items():
        cols, body = _table(rows)
        write_csv(out / f"{name}.csv", cols, body, cfg.seed)
        rep.outputs.append(f"{name}.csv")
    rep.outputs += ["solver.log", "report.json"]
    rep.rows = [dict(table=k, rows=len(v)) for k, v in tables.items()]
    rep.environment = environment(semigroup_grids=suite.SEMIGROUP_GRIDS, roundoff=suite.ROUNDOFF,
                                  mass_tol=suite.MASS_TOL, ibp_constant=suite.IBP_C)
    rep.write_json(out / "report.json")
    return rep


RUNNERS = {
    "theorem-check": run_theorem_check,
    "domain-convergence": run_domain_convergence,
    "mehler-oracle": run_mehler_oracle,
    "property-suite": run_property_suite,
}


def run(cfg: ExperimentConfig) -> Report:
    return RUNNERS[cfg.experiment](cfg)


# ------------------------------------------------------------ command line

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--h", type=float, help="grid step")
    p.add_argument("--L", type=float, help="grid half-width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oubv", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)

    p = sub.add_parser("theorem-check", help="variation of T_t u0 as t -> 0 against the reference")
    _add_common(p)
    p.add_argument("--dim", type=int)
    p.add_argument("--domain")
    p.add_argument("--smooth", type=float, help="smooth the domain with this delta")
    p.add_argument("--u0")
    p.add_argument("--tmin", type=float)
    p.add_argument("--tmax", type=float)
    p.add_argument("--nt", type=int)
    p.add_argument("--linear-ladder", dest="geometric", action="store_const", const=False)
    p.add_argument("--c-disc", dest="c_disc", type=float)
    p.add_argument("--upper-tol", dest="upper_tol", type=float)
    p.add_argument("--limit-tol", dest="limit_tol", type=float)

    p = sub.add_parser("domain-convergence", help="resolvents on polygons approaching a target")
    _add_common(p)
    p.add_argument("--target")
    p.add_argument("--faces", help="m range lo:hi or comma list")
    p.add_argument("--lambda", dest="lambdas", type=float, action="append")
    p.add_argument("--delta-scale", dest="delta_scale", type=float)
    p.add_argument("--f")

    p = sub.add_parser("mehler-oracle", help="Neumann evolution on a wide interval vs Mehler")
    _add_common(p)
    p.add_argument("--t", type=float)
    p.add_argument("--u0", dest="oracle_u0", action="append")
    p.add_argument("--tol", dest="oracle_tol", type=float)

    p = sub.add_parser("property-suite", help="seeded invariant checks")
    _add_common(p)
    p.add_argument("--n-pairs", dest="n_pairs", type=int)
    p.add_argument("--n-fields", dest="n_fields", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    experiment = args.pop("experiment")
    cfg_file = args.pop("config")
    for key in ("lambdas", "oracle_u0"):
        if args.get(key) is not None:
            args[key] = tuple(args[key])
    try:
        file_values = read_config_file(cfg_file) if cfg_file else {}
        file_values.pop("experiment", None)
        cfg = make_config(experiment, file_values, **args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryJumpWarning)
            rep = run(cfg)
    except (ExperimentError, ValueError, OSError) as exc:
        print(f"oubv {experiment}: error: {exc}", file=sys.stderr)
        return 2
    print(rep.summary())
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
