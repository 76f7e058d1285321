"""Neumann Ornstein-Uhlenbeck operator on a convex body.

The operator is defined through its Dirichlet form: on the nodes strictly
inside the body, every pair of axis-neighbours contributes
``w_face * (u_+ - u_-)(v_+ - v_-) / h^2`` with ``w_face`` the Gaussian
weight at the face midpoint.  Pairs that straddle the boundary contribute
nothing, which is the variational Neumann condition.  The form is stored
as ``A = D^T W D`` with ``D`` the (signed, scaled) edge incidence matrix,
so symmetry, positivity and the constant kernel hold exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import cg, splu

from .bv import VariationEstimate, jump_variation, sobolev_variation, Jump
from .gaussian import GaussianGrid, GridError, ScalarField, admissible, build_grid, gaussian_density
from .geometry import ConvexBody, HalfspaceBody

log = logging.getLogger(__name__)

MIN_STEPS = 32
CG_RTOL = 1e-10


class SolverError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class TimeResolutionError(ValueError):
    """Requested time or step is outside what the grid can resolve."""


def _edges(mask: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """For each axis, flat indices of node pairs ``(i, i + e_axis)`` both in ``mask``."""
    flat = np.arange(mask.size).reshape(mask.shape)
    out = []
    for ax in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        out.append((ax, flat[tuple(lo)][both], flat[tuple(hi)][both]))
    return out


def _incidence(grid: GaussianGrid, mask: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Edge incidence ``D`` (rows: edges, columns: all grid nodes) and face weights."""
    h = grid.h
    pts = grid.points
    rows, cols, vals, wts = [], [], [], []
    n_e = 0
    for ax, lo, hi in _edges(mask):
        k = len(lo)
        r = np.arange(n_e, n_e + k)
        rows += [r, r]
        cols += [lo, hi]
        vals += [np.full(k, -1.0 / h), np.full(k, 1.0 / h)]
        mid = pts[lo].copy()
        mid[:, ax] += 0.5 * h
        wts.append(gaussian_density(mid, grid.dim) * h**grid.dim)
        n_e += k
    if n_e == 0:
        D = sp.csr_matrix((0, grid.size))
        return D, np.zeros(0)
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_e, grid.size))
    return D, np.concatenate(wts)


def edge_energy(grid: GaussianGrid, mask: np.ndarray, values: np.ndarray) -> float:
    """``sum_faces w_face ((u_+ - u_-)/h)^2`` over faces with both ends in ``mask``."""
    D, w = _incidence(grid, mask)
    du = D @ np.where(mask, values, 0.0).ravel()
    return float(du @ (w * du))


def w12_distance(u: ScalarField, v: ScalarField, body: ConvexBody) -> float:
    """``W^{1,2}(body, gamma)`` norm of ``u - v`` on the nodes of ``body``.

    The gradient part is the form energy restricted to the body
    (one-sided differences on edges inside it).
    """
    m = admissible(u, body) & admissible(v, body)
    diff = np.where(m, u.values - v.values, 0.0)
    l2 = float(np.sum(diff[m] ** 2 * u.grid.weights[m]))
    return math.sqrt(l2 + edge_energy(u.grid, m, diff))


@dataclass(eq=False)
class OUOperator:
    grid: GaussianGrid
    body: ConvexBody
    mask: np.ndarray
    form_matrix: sp.csr_matrix
    mass_weights: np.ndarray
    incidence: sp.csr_matrix = field(repr=False)
    face_weights: np.ndarray = field(repr=False)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.mask.ravel())

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    def restrict(self, u: ScalarField) -> np.ndarray:
        """Values of ``u`` on the interior nodes (in flat order)."""
        if u.grid != self.grid:
            raise GridError("field and operator live on different grids")
        if not np.all(u.active[self.mask]):
            raise GridError("field is not defined on every interior node of the operator")
        return np.asarray(u.values[self.mask], dtype=float)

    def extend(self, x: np.ndarray) -> ScalarField:
        vals = np.full(self.grid.shape, np.nan)
        vals[self.mask] = x
        return ScalarField(self.grid, vals, self.mask)

    def _vec(self, u) -> np.ndarray:
        return self.restrict(u) if isinstance(u, ScalarField) else np.asarray(u, dtype=float)

    def energy(self, u, v) -> float:
        """``E_h(u, v) = (D u) . W (D v)``, evaluated as ``(Du * Dv) . w`` so that
        swapping the arguments gives bitwise the same number."""
        du = self.incidence @ self._vec(u)
        dv = self.incidence @ self._vec(v)
        return float(np.dot(du * dv, self.face_weights))

    def inner(self, u, v) -> float:
        return float(np.sum(self.mass_weights * self._vec(u) * self._vec(v)))

    def mass(self, u) -> float:
        return float(np.sum(self.mass_weights * self._vec(u)))


def assemble_dirichlet_form(grid: GaussianGrid, body: ConvexBody) -> OUOperator:
    mask = np.array(body.grid_mask(grid))
    if not mask.any():
        raise GridError("body has no interior grid nodes; refine the grid")
    _, ncomp = ndimage.label(mask)
    if ncomp != 1:
        raise GridError(f"interior nodes form {ncomp} connected components; refine the grid")
    D_full, w = _incidence(grid, mask)
    D = D_full[:, np.flatnonzero(mask.ravel())].tocsr()
    A = (D.T @ sp.diags(w) @ D).tocsr()
    M = grid.weights[mask]
    log.debug("assembled form: %d nodes, %d faces", mask.sum(), D.shape[0])
    return OUOperator(grid, body, mask, A, M, D, w)


def solve_resolvent(op: OUOperator, lam: float, f: ScalarField, maxiter: int | None = None) -> ScalarField:
    """``u = (lam - L)^{-1} f``: conjugate gradients on ``(lam M + A) u = M f``.

    The system is symmetrically scaled by its diagonal; the stopping test is
    the relative residual ``1e-10`` of the scaled system.  The iteration
    starts from ``f / lam`` (exact when ``f`` is constant).
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    M = op.mass_weights
    K = (sp.diags(lam * M) + op.form_matrix).tocsr()
    s = 1.0 / np.sqrt(K.diagonal())
    Ks = (sp.diags(s) @ K @ sp.diags(s)).tocsr()
    fx = op.restrict(f)
    b = s * M * fx
    cap = maxiter if maxiter is not None else max(5000, 2 * op.n)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    y, info = cg(Ks, b, x0=fx / (lam * s), rtol=CG_RTOL, atol=0.0, maxiter=cap, callback=count)
    bn = float(np.linalg.norm(b))
    res = float(np.linalg.norm(b - Ks @ y)) / bn if bn > 0 else 0.0
    log.info("resolvent lambda=%g: %d CG iterations, relative residual %.3e", lam, iters, res)
    if info != 0:
        raise SolverError(f"CG did not converge in {cap} iterations (residual {res:.3e})")
    return op.extend(s * y)


def default_steps(t: float, h: float) -> int:
    return max(MIN_STEPS, math.ceil(t / h - 1e-9))


@dataclass
class _Stepper:
    """Crank-Nicolson with a backward-Euler half-step start.

    Both use the matrix ``M + dt/2 A``, so a single factorisation serves
    the whole run.
    """

    op: OUOperator
    dt: float

    def __post_init__(self):
        A = self.op.form_matrix
        M = sp.diags(self.op.mass_weights)
        self.lhs = splu((M + 0.5 * self.dt * A).tocsc())
        self.A = A

    def euler_half(self, x: np.ndarray) -> np.ndarray:
        return self.lhs.solve(self.op.mass_weights * x)

    def cn(self, x: np.ndarray) -> np.ndarray:
        return self.lhs.solve(self.op.mass_weights * x - 0.5 * self.dt * (self.A @ x))

    def run(self, x: np.ndarray, steps: int, startup: int) -> np.ndarray:
        # The scheme commutes with adding constants; stepping the deviation
        # from one nodal value makes constant data come back bitwise unchanged.
        ref = x[int(np.argmax(self.op.mass_weights))]
        return self._run(x - ref, steps, startup) + ref

    def _run(self, x: np.ndarray, steps: int, startup: int) -> np.ndarray:
        k = min(startup, steps)
        for _ in range(2 * k):
            x = self.euler_half(x)
        for _ in range(steps - k):
            x = self.cn(x)
        return x


def _check_dt(op: OUOperator, t: float, steps: int) -> float:
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    dt = t / steps
    if dt > op.grid.h * (1 + 1e-12):
        raise TimeResolutionError(f"dt={dt:.3g} exceeds the accuracy budget h={op.grid.h:.3g}; "
                                  f"use at least {math.ceil(t / op.grid.h)} steps")
    return dt


def evolve_semigroup(op: OUOperator, u0: ScalarField, t: float, steps: int | None = None,
                     startup: int = 2) -> ScalarField:
    """Approximate ``T_t u0`` by time stepping ``M du/dt = -A u``.

    Crank-Nicolson after ``startup`` steps that are each replaced by two
    backward-Euler half-steps (damps grid-scale content of rough data).
    """
    steps = default_steps(t, op.grid.h) if steps is None else int(steps)
    dt = _check_dt(op, t, steps)
    x = _Stepper(op, dt).run(op.restrict(u0), steps, startup)
    log.info("evolve t=%g: %d steps of dt=%.3e", t, steps, dt)
    return op.extend(x)


def cylinder_rank(body: ConvexBody) -> int | None:
    """Number ``m`` of leading coordinates the body depends on, when it is
    a cylinder ``B x R^(d-m)`` described by half-spaces; ``None`` otherwise."""
    if not isinstance(body, HalfspaceBody):
        return None
    used = np.flatnonzero(np.any(np.abs(body.normals) > 0, axis=0))
    m = int(used.max()) + 1 if used.size else 0
    return m if 1 <= m < body.dim else None


def cylinder_base(body: HalfspaceBody, m: int) -> HalfspaceBody:
    return HalfspaceBody(body.normals[:, :m], body.offsets, body.center[:m])


def evolve_cylindrical(op: OUOperator, u0: ScalarField, t: float, steps: int | None = None,
                       startup: int = 2) -> ScalarField:
    """``T_t u0`` for a cylindrical body and data depending on the base coordinates only.

    The evolution is run on the base grid and broadcast back; the discrete
    form factorises over the product, so this equals the full solve up to
    round-off.
    """
    m = cylinder_rank(op.body)
    if m is None:
        raise ValueError("body is not a half-space cylinder")
    g = op.grid
    vals = u0.values
    base_idx = (slice(None),) * m + (0,) * (g.dim - m)
    base_vals = vals[base_idx]
    if not np.allclose(vals, base_vals.reshape(base_vals.shape + (1,) * (g.dim - m)), rtol=0, atol=0,
                       equal_nan=True):
        raise ValueError("initial datum depends on the cylinder's free coordinates")
    gb = build_grid(m, g.L, g.h, max_nodes=g.size)
    if gb.shape != g.shape[:m]:
        raise GridError("base grid does not match the full grid")
    op_b = assemble_dirichlet_form(gb, cylinder_base(op.body, m))
    ub = ScalarField(gb, base_vals, op_b.mask if u0.mask is not None else None)
    out_b = evolve_semigroup(op_b, ub, t, steps, startup)
    full = np.broadcast_to(out_b.values.reshape(gb.shape + (1,) * (g.dim - m)), g.shape)
    return ScalarField(g, np.where(op.mask, full, np.nan), op.mask)


@dataclass(frozen=True)
class SemigroupTrace:
    times: np.ndarray
    values: np.ndarray
    reference: float
    tolerances: np.ndarray
    mass_drift: np.ndarray
    steps: np.ndarray
    h: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("variation values must be nonnegative")

    @property
    def contraction_margin(self) -> np.ndarray:
        """``reference (1 + eps) - F(t)``; nonnegative when the upper bound holds."""
        return self.reference * (1.0 + self.tolerances) - self.values

    def monotonicity_margins(self) -> np.ndarray:
        """``F(t_k) + eps(t_k) - F(t_{k+1})`` for consecutive pairs."""
        return self.values[:-1] + self.tolerances[:-1] - self.values[1:]

    def rows(self) -> list[tuple[float, ...]]:
        return [(float(t), float(f), float(self.reference), float(e), float(md), float(cm), self.h)
                for t, f, e, md, cm in zip(self.times, self.values, self.tolerances,
                                           self.mass_drift, self.contraction_margin)]


CSV_COLUMNS = ("t", "F_t", "reference", "err_estimate", "mass_drift", "contraction_margin", "h")


def discretization_error(h: float, t: float, dt: float, C: float = 1.0) -> float:
    """``C (h / sqrt(t) + dt^2 / t)``."""
    return C * (h / math.sqrt(t) + dt * dt / t)


def min_time(h: float) -> float:
    return (10.0 * h) ** 2


def variation_trace(op: OUOperator, u0: ScalarField, times: Sequence[float],
                    jumps: Sequence[Jump] | None = None, startup: int = 2,
                    C: float = 1.0) -> SemigroupTrace:
    """``F(t) = |grad T_t u0|`` integrated over the body along a time ladder.

    The ladder is traversed sequentially (``T_{t_k} = T_{t_k - t_{k-1}} T_{t_{k-1}}``)
    with ``max(32, ceil(dt_segment / h))`` steps per segment.  The reference
    is the exact jump variation when ``jumps`` are given, otherwise the
    Sobolev variation of ``u0``.
    """
    times = np.asarray(times, dtype=float)
    h = op.grid.h
    if times.size == 0:
        raise ValueError("empty time ladder")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time ladder must be strictly increasing")
    if times[0] < min_time(h) * (1 - 1e-12):
        raise TimeResolutionError(f"t={times[0]:.3g} is below the resolvable threshold (10h)^2={min_time(h):.3g}")
    ref: VariationEstimate = (jump_variation(jumps, op.body) if jumps
                              else sobolev_variation(u0, op.body))
    x = op.restrict(u0)
    mass0 = op.mass(x)
    scale = max(abs(mass0), float(np.sum(op.mass_weights * np.abs(x))), 1e-300)
    vals, tols, drift, nsteps = [], [], [], []
    prev = 0.0
    for k, t in enumerate(times):
        seg = t - prev
        steps = default_steps(seg, h)
        dt = _check_dt(op, seg, steps)
        x = _Stepper(op, dt).run(x, steps, startup if k == 0 else 0)
        ut = op.extend(x)
        vals.append(sobolev_variation(ut, op.body).value)
        tols.append(discretization_error(h, t, dt, C))
        drift.append(abs(op.mass(x) - mass0) / scale)
        nsteps.append(steps)
        log.info("trace t=%.6g F=%.10g steps=%d dt=%.3e", t, vals[-1], steps, dt)
        prev = t
    return SemigroupTrace(times, np.asarray(vals), ref.value, np.asarray(tols),
                          np.asarray(drift), np.asarray(nsteps), h)
