from __future__ import annotations

import math

import numpy as np
import pytest

from oubv import bv
from oubv import neumann as nm
from oubv.gaussian import GridError, build_grid, l2_norm, mehler_apply
from oubv.geometry import BallBody, HalfspaceBody, box_body, interval_body

G0 = 1 / math.sqrt(2 * math.pi)


@pytest.fixture(scope="module")
def line():
    g = build_grid(1, 8.0, 2**-8)
    return g, nm.assemble_dirichlet_form(g, interval_body(-8.0, 8.0))


def test_form_examples(line):
    g, op = line
    x = g.field(lambda x: x)
    assert op.energy(x, x) == pytest.approx(1.0, abs=1e-12)
    gi = build_grid(1, 2.0, 2**-10)
    opi = nm.assemble_dirichlet_form(gi, interval_body(-1, 1))
    xi = gi.field(lambda x: x)
    assert opi.energy(xi, xi) == pytest.approx(math.erf(1 / math.sqrt(2)), abs=2 * gi.h)


def test_form_symmetric_nonnegative_constant_kernel():
    g = build_grid(2, 2.0, 2**-4)
    op = nm.assemble_dirichlet_form(g, BallBody(1.3, dim=2))
    A = op.form_matrix
    assert abs(A - A.T).max() == 0.0
    assert np.max(np.abs(A @ np.ones(op.n))) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(5):
        u, v = rng.normal(size=(2, op.n))
        assert op.energy(u, v) == op.energy(v, u)
        assert op.energy(u, u) >= 0.0
        assert op.energy(np.full(op.n, 3.0), v) == 0.0


def test_assembly_errors():
    g = build_grid(2, 2.0, 0.5)
    with pytest.raises(GridError):
        nm.assemble_dirichlet_form(g, BallBody(0.1, dim=2, center=[0.25, 0.25]))
    # a thin diagonal slab whose nodes touch only at corners
    slab = HalfspaceBody([[1.0, -1.0], [-1.0, 1.0]], [0.05, 0.05])
    with pytest.raises(GridError):
        nm.assemble_dirichlet_form(g, slab)


def test_resolvent_examples(line):
    g, op = line
    c = nm.solve_resolvent(op, 2.0, g.constant(3.0))
    assert np.allclose(op.restrict(c), 1.5, rtol=1e-8)
    u = nm.solve_resolvent(op, 1.0, g.field(lambda x: x))
    core = np.abs(g.axis) < 4
    assert np.max(np.abs(u.values - g.axis / 2)[core]) < 1e-5
    with pytest.raises(ValueError):
        nm.solve_resolvent(op, 0.0, g.constant(1.0))
    with pytest.raises(nm.SolverError):
        nm.solve_resolvent(op, 1.0, g.field(np.sign), maxiter=3)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_resolvent_dissipative(lam):
    g = build_grid(2, 2.0, 2**-4)
    op = nm.assemble_dirichlet_form(g, box_body(2, 1.2))
    f = g.field(lambda x, y: np.sign(x - 0.2 * y) + y**3)
    u = nm.solve_resolvent(op, lam, f)
    assert lam * math.sqrt(op.inner(u, u)) <= math.sqrt(op.inner(f, f)) * (1 + 1e-10)


def test_evolve_constants_and_mass(line):
    g, op = line
    c = nm.evolve_semigroup(op, g.constant(-2.0), 0.7)
    assert np.all(op.restrict(c) == -2.0)
    c = nm.evolve_semigroup(op, g.constant(0.1), 0.3)
    assert np.all(op.restrict(c) == 0.1)
    u0 = g.field(lambda x: np.sign(x - 0.3) + x**2)
    ut = nm.evolve_semigroup(op, u0, 0.4)
    assert abs(op.mass(ut) - op.mass(u0)) < 1e-10


def test_evolve_linear_ln2_matches_mehler(line):
    g, op = line
    x = g.field(lambda x: x)
    ut = nm.evolve_semigroup(op, x, math.log(2))
    core = np.abs(g.axis) < 4
    assert np.max(np.abs(ut.values - 0.5 * g.axis)[core]) < 1e-4
    m = mehler_apply(x, math.log(2))
    assert l2_norm(ut.with_values(ut.values - m.values)) < 1e-4


def test_evolve_rejects(line):
    g, op = line
    with pytest.raises(nm.TimeResolutionError):
        nm.evolve_semigroup(op, g.constant(1.0), 1.0, steps=10)
    with pytest.raises(ValueError):
        nm.evolve_semigroup(op, g.constant(1.0), -1.0)
    with pytest.raises(GridError):
        nm.evolve_semigroup(op, g.constant(1.0).restrict(np.abs(g.axis) < 1), 0.1)


def test_trace_sign_interval():
    g = build_grid(1, 8.0, 2**-9)
    op = nm.assemble_dirichlet_form(g, interval_body(-1, 1))
    tr = nm.variation_trace(op, g.field(np.sign), np.geomspace(0.01, 1, 10), jumps=[bv.Jump(0.0, 2.0)])
    assert tr.reference == pytest.approx(2 * G0)
    assert np.all(tr.monotonicity_margins() >= 0)
    assert np.all(tr.values <= tr.reference * (1 + tr.tolerances))
    assert np.all(tr.mass_drift < 1e-10)
    assert len(tr.rows()[0]) == len(nm.CSV_COLUMNS)
    with pytest.raises(nm.TimeResolutionError):
        nm.variation_trace(op, g.field(np.sign), [1e-5, 1e-3])
    with pytest.raises(ValueError):
        nm.variation_trace(op, g.field(np.sign), [0.5, 0.1])


@pytest.mark.parametrize("fn", [lambda x: np.sin(np.pi * x / 2), lambda x: np.sin(2 * x)])
def test_trace_smooth_data_converges_to_sobolev_variation(fn):
    g = build_grid(1, 8.0, 2**-9)
    op = nm.assemble_dirichlet_form(g, interval_body(-1.0, 1.0))
    u0 = g.field(fn)
    tr = nm.variation_trace(op, u0, np.geomspace(0.002, 0.5, 8))
    assert tr.reference == pytest.approx(bv.sobolev_variation(u0, op.body).value)
    err = np.abs(tr.values - tr.reference)
    assert np.all(np.diff(err) > 0)
    # data violating the Neumann condition lose O(sqrt t) in a boundary layer
    assert err[0] < 2 * math.sqrt(tr.times[0]) * tr.reference


def test_whole_line_trace_matches_closed_form(line):
    g, op = line
    tr = nm.variation_trace(op, g.field(np.sign), [0.05, 0.2, 0.8])
    # T_t sign = erf(e^{-t} x / sqrt(2(1 - e^{-2t}))) gives F(t) = 2 G(0) e^{-t}
    assert np.allclose(tr.values, 2 * G0 * np.exp(-tr.times), rtol=5e-3)


def test_cylinder_fast_path_matches_full_solve():
    g = build_grid(2, 2.0, 2**-4)
    op = nm.assemble_dirichlet_form(g, HalfspaceBody([[1.0, 0.0], [-1.0, 0.0]], [0.7, 1.0]))
    assert nm.cylinder_rank(op.body) == 1
    u0 = g.field(lambda x, y: np.sign(x) + x**2)
    full, fast = nm.evolve_semigroup(op, u0, 0.2), nm.evolve_cylindrical(op, u0, 0.2)
    assert np.max(np.abs(op.restrict(full) - op.restrict(fast))) < 1e-12
    with pytest.raises(ValueError):
        nm.evolve_cylindrical(op, g.field(lambda x, y: y), 0.2)
    assert nm.cylinder_rank(BallBody(1.0, dim=2)) is None


def test_w12_distance_identical_systems():
    g = build_grid(2, 2.0, 2**-4)
    disk = BallBody(0.99, dim=2)
    bigger = BallBody(0.99 + 1e-6, dim=2)
    assert np.array_equal(disk.grid_mask(g), bigger.grid_mask(g))
    f = g.field(lambda x, y: x)
    u = nm.solve_resolvent(nm.assemble_dirichlet_form(g, disk), 1.0, f)
    v = nm.solve_resolvent(nm.assemble_dirichlet_form(g, bigger), 1.0, f)
    assert nm.w12_distance(u, v, disk) < 1e-8
