"""Seeded property checks: semigroup invariants, conditional expectations,
integration by parts, convex geometry and smooth approximation.

Every check returns table rows and appends verdicts to a ``Report``; each
tolerance is stated next to the quantity it bounds.
"""
from __future__ import annotations

import math
import numpy as np

from . import bv
from . import neumann as nm
from .gaussian import GaussianGrid, GridError, ScalarField, build_grid, gaussian_density
from .geometry import (BallBody, ConvexBody, HalfspaceBody, SmoothBody, boundary_gradient_bound,
                       boundary_points, box_body, interval_body, smooth_body)
from .report import Report

ROUNDOFF = 1e-10
MASS_TOL = 1e-10


# ----------------------------------------------------------- random inputs

def random_body(rng: np.random.Generator, dim: int) -> ConvexBody:
    """Interval, ball, random polygon or smoothed polygon containing the origin."""
    if dim == 1:
        return interval_body(-rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5))
    kind = rng.integers(3)
    if kind == 0:
        return BallBody(rng.uniform(0.6, 1.6), np.zeros(dim))
    k = int(rng.integers(dim + 2, 9))
    normals = rng.normal(size=(k, dim))
    body = HalfspaceBody(normals, rng.uniform(0.6, 1.5, k))
    if kind == 2:
        return smooth_body(body, 0.2 * body.inradius)
    return body


def resolvable_body(rng: np.random.Generator, grid: GaussianGrid, tries: int = 50):
    """Draw random bodies until one has a connected interior on ``grid``
    (thin slivers below the grid scale are outside the operator's domain)."""
    for _ in range(tries):
        body = random_body(rng, grid.dim)
        try:
            return body, nm.assemble_dirichlet_form(grid, body)
        except GridError:
            continue
    raise GridError(f"no resolvable body in {tries} draws; refine the grid")


def random_smooth_field(rng: np.random.Generator, grid: GaussianGrid, terms: int = 3) -> ScalarField:
    """``sum_k c_k cos(w_k . x + p_k)`` with Gaussian frequencies."""
    w = rng.normal(size=(terms, grid.dim))
    p = rng.uniform(0.0, 2 * math.pi, terms)
    c = rng.normal(size=terms)
    vals = sum(c[k] * np.cos(sum(w[k, i] * grid.coords[i] for i in range(grid.dim)) + p[k])
               for k in range(terms))
    return ScalarField(grid, vals)


def random_initial(rng: np.random.Generator, grid: GaussianGrid) -> tuple[ScalarField, str]:
    """A smooth field or a step across a random hyperplane through the core."""
    if rng.random() < 0.5:
        return random_smooth_field(rng, grid), "smooth"
    e = rng.normal(size=grid.dim)
    e /= np.linalg.norm(e)
    a = rng.uniform(-0.3, 0.3)
    proj = sum(e[i] * grid.coords[i] for i in range(grid.dim))
    return ScalarField(grid, np.sign(proj - a)), "step"


def law_tolerance(norm_u0: float, h: float, *times: float) -> float:
    """Declared scheme tolerance ``|u0| sum dt^2 / min(t)^{3/2}`` for comparing
    two stepping histories of the same discrete operator."""
    dts = [t / nm.default_steps(t, h) for t in times]
    return norm_u0 * sum(dt * dt for dt in dts) / min(times) ** 1.5


# ------------------------------------------------------- semigroup checks

SEMIGROUP_GRIDS = {1: dict(L=4.0, h=2.0**-7), 2: dict(L=2.0, h=2.0**-4)}


def semigroup_properties(report: Report, seed: int, n_pairs: int = 50,
                         n_resolvent: int = 10) -> list[dict]:
    """Law, symmetry, contraction, mass and resolvent identity on random pairs."""
    rng = np.random.default_rng(seed)
    grids = {d: build_grid(d, **kw) for d, kw in SEMIGROUP_GRIDS.items()}
    rows = []
    worst = dict(law=math.inf, sym=math.inf, contraction=math.inf, mass=math.inf, resolvent=math.inf)
    for case in range(n_pairs):
        d = 1 if case % 2 == 0 else 2
        g = grids[d]
        body, op = resolvable_body(rng, g)
        u0, kind = random_initial(rng, g)
        v0 = random_smooth_field(rng, g)
        s, t = (float(x) for x in rng.uniform(0.05, 0.5, 2))
        x, y = op.restrict(u0), op.restrict(v0)
        nu, nv = math.sqrt(op.inner(x, x)), math.sqrt(op.inner(y, y))

        tu = op.restrict(nm.evolve_semigroup(op, u0, t))
        tv = op.restrict(nm.evolve_semigroup(op, v0, t))
        stu = op.restrict(nm.evolve_semigroup(op, op.extend(tu), s))
        s_tu = op.restrict(nm.evolve_semigroup(op, u0, s + t))
        diff = stu - s_tu
        law_err = math.sqrt(op.inner(diff, diff))
        law_tol = law_tolerance(nu, g.h, s, t, s + t)
        sym_err = abs(op.inner(tu, y) - op.inner(x, tv))
        sym_tol = ROUNDOFF * nu * nv
        contraction = nu * (1 + ROUNDOFF) - math.sqrt(op.inner(tu, tu))
        mass_drift = abs(op.mass(s_tu) - op.mass(x)) / max(float(np.sum(op.mass_weights * np.abs(x))), 1e-300)

        res_err, res_tol = float("nan"), float("nan")
        if case < n_resolvent:
            lam, mu = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0))
            r_l = op.restrict(nm.solve_resolvent(op, lam, v0))
            r_m = op.restrict(nm.solve_resolvent(op, mu, v0))
            r_lm = op.restrict(nm.solve_resolvent(op, lam, op.extend(r_m)))
            e = r_l - r_m - (mu - lam) * r_lm
            res_err = math.sqrt(op.inner(e, e))
            # CG stops at relative residual 1e-10 of the diagonally scaled system;
            # allow four orders for the condition number of the scaling.
            res_tol = 1e-6 * nv * (1 / lam + 1 / mu + abs(mu - lam) / (lam * mu))
            worst["resolvent"] = min(worst["resolvent"], res_tol - res_err)

        worst["law"] = min(worst["law"], law_tol - law_err)
        worst["sym"] = min(worst["sym"], sym_tol - sym_err)
        worst["contraction"] = min(worst["contraction"], contraction)
        worst["mass"] = min(worst["mass"], MASS_TOL - mass_drift)
        rows.append(dict(case=case, dim=d, body=type(body).__name__, u0=kind, s=s, t=t, h=g.h,
                         law_error=law_err, law_tol=law_tol, symmetry_error=sym_err, symmetry_tol=sym_tol,
                         contraction_margin=contraction, mass_drift=mass_drift,
                         resolvent_error=res_err, resolvent_tol=res_tol))
    report.add("semigroup", "semigroup-law", worst["law"], f"{n_pairs} seeded pairs")
    report.add("semigroup", "symmetry", worst["sym"])
    report.add("semigroup", "L2-contraction", worst["contraction"])
    report.add("semigroup", "mass-conservation", worst["mass"], f"drift tolerance {MASS_TOL:g}")
    if n_resolvent:
        report.add("semigroup", "resolvent-identity", worst["resolvent"], f"{min(n_resolvent, n_pairs)} pairs")
    return rows


def cylinder_crosscheck(report: Report, h: float = 2.0**-5, t: float = 0.3) -> dict:
    """Full 2-d solve on a strip versus the 1-d base solve."""
    g = build_grid(2, 3.0, h)
    body = HalfspaceBody([[1.0, 0.0], [-1.0, 0.0]], [0.8, 1.1])
    op = nm.assemble_dirichlet_form(g, body)
    u0 = ScalarField(g, np.sign(g.coords[0] - 0.1))
    full = nm.evolve_semigroup(op, u0, t)
    fast = nm.evolve_cylindrical(op, u0, t)
    x, y = op.restrict(full), op.restrict(fast)
    err = float(np.max(np.abs(x - y)))
    report.add("semigroup", "cylinder-reduction", 1e-10 - err, f"max nodal difference {err:.2e}")
    return dict(h=h, t=t, max_difference=err)


# ------------------------------------------------- conditional expectation

def em_contraction(report: Report, seed: int, n_fields: int = 25, boxes=(0.5, 1.0, 2.0),
                   L: float = 6.0, h: float = 2.0**-4) -> list[dict]:
    """Variation of ``E_1 u`` against that of ``u`` on nested cylindrical boxes ``{|x_1| < a}``.

    The averaging weights are renormalised, so the discrete inequality holds
    up to the factor ``1 / sum_j w_j`` of the truncated weight sum; that
    factor (minus one) times the variation is the declared tolerance.
    """
    rng = np.random.default_rng(seed)
    g = build_grid(2, L, h)
    wsum = float(g.weights_1d.sum())
    rows, worst = [], math.inf
    for k in range(n_fields):
        u = random_smooth_field(rng, g, terms=4)
        if rng.random() < 0.5:
            a = rng.uniform(-0.5, 0.5)
            u = u.with_values(u.values + rng.normal() * np.sign(g.coords[0] - a * g.coords[1]))
        e1 = bv.conditional_expectation(u, 1)
        for a in boxes:
            box = HalfspaceBody([[1.0, 0.0], [-1.0, 0.0]], [a, a])
            vu = bv.sobolev_variation(u, box).value
            ve = bv.sobolev_variation(e1, box).value
            tol = vu * max(1.0 / wsum - 1.0, 0.0) + ROUNDOFF
            margin = vu + tol - ve
            worst = min(worst, margin)
            rows.append(dict(field=k, box=a, var_u=vu, var_E1u=ve, tol=tol, margin=margin, h=h))
    report.add("E_m-contraction", "variation-of-E1u<=variation-of-u", worst,
               f"{n_fields} fields x {len(boxes)} boxes")
    return rows


# --------------------------------------------------- integration by parts

IBP_C = 1.0


def ibp_residuals(exponents=(6, 7, 8, 9, 10), L: float = 8.0) -> list[dict]:
    """``|int u div phi + int <phi, grad u>|`` for ``u = sin 2x`` and an interior bump."""
    rows = []
    for k in exponents:
        g = build_grid(1, L, 2.0**-k)
        u = ScalarField(g, np.sin(2 * g.coords[0]) + 0.3 * g.coords[0] ** 2)
        phi = bv.bump_field(g, [0.1], 0.7, [1.0])
        div = bv.gaussian_divergence(phi)
        grad = bv.gradient(u)
        r = float(np.sum(u.values * div.values * g.weights) + np.sum(phi.values * grad.values * g.weights))
        rows.append(dict(h=g.h, residual=abs(r)))
    return rows


def fitted_order(rows: list[dict]) -> float:
    h = np.log([r["h"] for r in rows])
    res = np.log([max(r["residual"], 1e-300) for r in rows])
    return float(np.polyfit(h, res, 1)[0])


def ibp_check(report: Report) -> list[dict]:
    rows = ibp_residuals()
    order = fitted_order(rows)
    report.add("integration-by-parts", "residual<=C*h", min(IBP_C * r["h"] - r["residual"] for r in rows),
               f"C={IBP_C}")
    report.add("integration-by-parts", "fitted-order>=0.9", order - 0.9, f"order={order:.3f}")
    return rows


# -------------------------------------------------------- convex geometry

def geometry_bodies() -> dict[str, ConvexBody]:
    rng = np.random.default_rng(7)
    poly = HalfspaceBody(rng.normal(size=(7, 2)), rng.uniform(0.7, 1.3, 7))
    square = box_body(2, 1.0)
    return {"square": square, "disk": BallBody(1.0, np.zeros(2)), "polygon": poly,
            "cube": box_body(3, 1.0), "smooth-square": smooth_body(square, 0.1)}


def gauge_properties(body: ConvexBody, rng: np.random.Generator, n: int = 1000) -> dict:
    """Worst margins of convexity, homogeneity and Lipschitz(1/r) on random pairs."""
    d = body.dim
    x = body.center + rng.uniform(-3, 3, size=(n, d))
    y = body.center + rng.uniform(-3, 3, size=(n, d))
    s = rng.uniform(0, 1, size=(n, 1))
    mx, my = body.gauge(x), body.gauge(y)
    mz = body.gauge((1 - s) * x + s * y)
    tol = 1e-12 * (1 + np.abs(mx) + np.abs(my))
    convex = float(np.min((1 - s[:, 0]) * mx + s[:, 0] * my + tol - mz))
    r = body.base.inradius if isinstance(body, SmoothBody) else body.inradius
    lip = float(np.min(np.linalg.norm(x - y, axis=1) / r + tol - np.abs(mx - my)))
    out = dict(convexity=convex, lipschitz=lip, homogeneity=math.nan)
    if not isinstance(body, SmoothBody):
        c = rng.uniform(0.01, 5, size=(n, 1))
        mc = body.gauge(body.center + c * (x - body.center))
        out["homogeneity"] = float(np.min(1e-12 * (1 + c[:, 0] * mx) - np.abs(mc - c[:, 0] * mx)))
    return out


def gamma_collar(base: ConvexBody, delta: float, grid: GaussianGrid) -> float:
    """``gamma(C_delta minus C)`` by grid quadrature."""
    outer = smooth_body(base, delta).grid_mask(grid)
    inner = base.grid_mask(grid)
    return float(np.sum(grid.weights[outer & ~inner]))


def geometry_check(report: Report, seed: int, deltas=(0.2, 0.1, 0.05, 0.025)) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for name, body in geometry_bodies().items():
        p = gauge_properties(body, rng)
        rows.append(dict(kind="gauge", body=name, **p))
        report.add("convex-geometry", f"convexity[{name}]", p["convexity"])
        report.add("convex-geometry", f"lipschitz[{name}]", p["lipschitz"])
        if not math.isnan(p["homogeneity"]):
            report.add("convex-geometry", f"homogeneity[{name}]", p["homogeneity"])
    square = box_body(2, 1.0)
    grid = build_grid(2, 1.5, 2.0**-7)
    collars, contain, grads = [], [], []
    for delta in deltas:
        sm = smooth_body(square, delta)
        pts = boundary_points(square, 1024)
        containment = float(np.min(1.0 - sm.gauge(pts)))
        gmin, radial = boundary_gradient_bound(sm)
        col = gamma_collar(square, delta, grid)
        collars.append(col)
        contain.append(containment)
        grads.append(gmin)
        rows.append(dict(kind="smoothing", body="square", delta=delta, containment_margin=containment,
                         gamma_collar=col, grad_lower_bound=gmin, radial_lower_bound=radial, h=grid.h))
    report.add("convex-geometry", "containment C in interior of C_delta", min(contain))
    report.add("convex-geometry", "gamma(C_delta minus C) strictly decreasing",
               float(np.min(-np.diff(collars))), " > ".join(f"{c:.4g}" for c in collars))
    report.add("convex-geometry", "boundary gradient bounded below", min(grads),
               f"min |grad m_delta| = {min(grads):.4g}")
    return rows


# ------------------------------------------------------- smooth approximation

def meyers_serrin_check(report: Report, eps_list=(0.1, 0.05, 0.02), h: float = 2.0**-12) -> list[dict]:
    """Smooth approximants of ``sign`` on ``(-1, 1)``."""
    g = build_grid(1, 8.0, h)
    body = interval_body(-1.0, 1.0)
    u = ScalarField(g, np.sign(g.coords[0]))
    ref = bv.jump_variation([bv.Jump(0.0, 2.0)], body).value
    rows = []
    worst_l2, worst_var = math.inf, math.inf
    last = None
    for eps in eps_list:
        v, info = bv.meyers_serrin_approximate(u, eps, body, full_output=True)
        var = bv.sobolev_variation(v, body).value
        bound = eps * math.exp(eps * info.cutoff_radius + eps * eps / 2)
        worst_l2 = min(worst_l2, eps - info.l2_distance)
        worst_var = min(worst_var, bound - abs(var - ref))
        rows.append(dict(eps=eps, l2_distance=info.l2_distance, variation=var, reference=ref,
                         cutoff_radius=info.cutoff_radius, eta=info.eta, drift_bound=bound, h=h))
        last = (var, info.eta)
    report.add("meyers-serrin", "L2 distance < eps", worst_l2)
    report.add("meyers-serrin", "variation drift < eps*exp(eps*R+eps^2/2)", worst_var)
    # Mollifying a unit jump at radius eta loses at most G(0) eta^2 of variation;
    # the grid adds at most h.
    var, eta = last
    tol = gaussian_density(0.0, 1) * eta**2 + h
    report.add("meyers-serrin", "lower semicontinuity", var - ref + tol, f"tol={tol:.3g}")
    return rows
