"""Gaussian total variation on grids.

Several estimators of ``|D_gamma u|(O)`` are provided:

``sobolev``      quadrature of ``|grad u|`` (exact for ``W^{1,1}`` inputs),
``jump``         closed form for piecewise-constant inputs with known interfaces,
``dual``         the supremum definition restricted to a finite test family,
``regularized``  the cut-off functional ``int theta_R sqrt(|grad u|^2 + 1/R)``.

Gradients are isotropic (Euclidean norm of the full difference gradient);
differences are central in the interior of the admissible set and
second-order one-sided next to its boundary, so no values from outside the
body are ever read.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .gaussian import (GaussianGrid, GridError, ScalarField, VectorField, admissible,
                       gaussian_density, interpolate)
from .geometry import ConvexBody, mollifier_rule


class GridResolutionError(ValueError):
    """The requested accuracy needs a finer grid."""


@dataclass(frozen=True)
class VariationEstimate:
    value: float
    method: str
    resolution: float
    tail: float

    def __float__(self) -> float:
        return self.value

    def row(self) -> list[str]:
        return [self.method, repr(self.value), repr(self.resolution), repr(self.tail)]


@dataclass(frozen=True)
class Jump:
    """Interface of a piecewise-constant function.

    In one dimension ``location`` is a point; in two dimensions a polyline
    of shape ``(k, 2)`` with ``height`` a scalar or one value per segment.
    """

    location: object
    height: object


def _shift(a: np.ndarray, axis: int, k: int, fill) -> np.ndarray:
    """``out[i] = a[i + k]`` along ``axis``, ``fill`` past the edge."""
    out = np.full_like(a, fill)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k >= 0:
        src[axis], dst[axis] = slice(k, n), slice(0, n - k)
    else:
        src[axis], dst[axis] = slice(0, n + k), slice(-k, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def masked_gradient(values: np.ndarray, mask: np.ndarray, h: float) -> np.ndarray:
    """Difference gradient on the nodes of ``mask``; shape ``(d,) + values.shape``.

    Central where both neighbours are admissible, second-order one-sided
    where only one side has two admissible neighbours, first-order one-sided
    with a single neighbour, zero for nodes isolated along an axis.
    """
    u = np.where(mask, values, 0.0)
    grad = np.zeros((u.ndim,) + u.shape)
    for ax in range(u.ndim):
        up1, up2 = _shift(mask, ax, 1, False), _shift(mask, ax, 2, False)
        dn1, dn2 = _shift(mask, ax, -1, False), _shift(mask, ax, -2, False)
        u_p1, u_p2 = _shift(u, ax, 1, 0.0), _shift(u, ax, 2, 0.0)
        u_m1, u_m2 = _shift(u, ax, -1, 0.0), _shift(u, ax, -2, 0.0)
        g = np.zeros_like(u)
        central = up1 & dn1
        fwd2 = ~central & up1 & up2
        bwd2 = ~central & ~fwd2 & dn1 & dn2
        fwd1 = ~central & ~fwd2 & ~bwd2 & up1
        bwd1 = ~central & ~fwd2 & ~bwd2 & ~fwd1 & dn1
        g[central] = (u_p1 - u_m1)[central] / (2 * h)
        g[fwd2] = (-3 * u + 4 * u_p1 - u_p2)[fwd2] / (2 * h)
        g[bwd2] = (3 * u - 4 * u_m1 + u_m2)[bwd2] / (2 * h)
        g[fwd1] = (u_p1 - u)[fwd1] / h
        g[bwd1] = (u - u_m1)[bwd1] / h
        g[~mask] = 0.0
        grad[ax] = g
    return grad


def gradient(u: ScalarField, body: ConvexBody | None = None) -> VectorField:
    m = admissible(u, body)
    return VectorField(u.grid, masked_gradient(u.values, m, u.grid.h), m)


def gaussian_divergence(phi: VectorField) -> ScalarField:
    """``sum_j d_j phi_j - y_j phi_j`` with central differences.

    Components are taken as zero outside ``phi.mask``; the box edges use
    second-order one-sided differences.
    """
    g = phi.grid
    vals = np.where(phi.active, phi.values, 0.0)
    out = np.zeros(g.shape)
    for j in range(g.dim):
        out += np.gradient(vals[j], g.h, axis=j, edge_order=2) - g.coords[j] * vals[j]
    return ScalarField(g, out, phi.mask)


def sobolev_variation(u: ScalarField, body: ConvexBody | None = None) -> VariationEstimate:
    """``int_O |grad u| d gamma`` over the admissible nodes."""
    m = admissible(u, body)
    grad = masked_gradient(u.values, m, u.grid.h)
    gnorm = np.sqrt(np.sum(grad**2, axis=0))
    val = float(np.sum(gnorm[m] * u.grid.weights[m]))
    return VariationEstimate(val, "sobolev", u.grid.h, u.grid.tail)


def _jump_2d(jump: Jump, body: ConvexBody, step: float) -> tuple[float, float]:
    poly = np.asarray(jump.location, dtype=float).reshape(-1, 2)
    nseg = len(poly) - 1
    if nseg < 1:
        raise ValueError("a 2-d interface needs at least two vertices")
    heights = np.broadcast_to(np.asarray(jump.height, dtype=float), (nseg,))
    total, inside_len = 0.0, 0.0
    for p, q, hgt in zip(poly[:-1], poly[1:], heights):
        seg = float(np.linalg.norm(q - p))
        k = max(1, int(math.ceil(seg / step)))
        s = (np.arange(k) + 0.5) / k
        mids = p + s[:, None] * (q - p)
        ins = np.asarray(body.gauge(mids)) < 1.0
        ds = seg / k
        inside_len += ds * ins.sum()
        total += abs(hgt) * ds * float(np.sum(gaussian_density(mids[ins], 2)))
    return total, inside_len


def jump_variation(jumps: Sequence[Jump], body: ConvexBody, step: float = 1e-3) -> VariationEstimate:
    """Exact variation of a piecewise-constant function inside ``body``.

    One-dimensional jumps contribute ``|height| G_1(location)``; planar
    interfaces contribute ``|height|`` times the Gaussian-weighted length
    of the part inside the body (composite midpoint rule, spacing ``step``).
    """
    total = 0.0
    for jmp in jumps:
        if body.dim == 1:
            x = float(np.asarray(jmp.location).reshape(-1)[0])
            if not body.gauge([x]) < 1.0:
                raise ValueError(f"jump at {x} lies outside the body")
            total += abs(float(jmp.height)) * gaussian_density([x], 1)
        elif body.dim == 2:
            val, length = _jump_2d(jmp, body, step)
            if length == 0.0:
                raise ValueError("interface lies outside the body")
            total += val
        else:
            raise ValueError("jump interfaces are supported in one and two dimensions")
    return VariationEstimate(total, "jump", step if body.dim == 2 else 0.0, 0.0)


def _support_band(mask: np.ndarray, cells: int = 2) -> np.ndarray:
    """Nodes of the mask within ``cells`` grid steps of its complement
    (box edges count as complement)."""
    padded = np.pad(~mask, cells, constant_values=True)
    grown = ndimage.binary_dilation(padded, structure=np.ones((3,) * mask.ndim, bool), iterations=cells)
    inner = tuple(slice(cells, -cells) for _ in range(mask.ndim))
    return grown[inner]


def dual_variation_lower_bound(u: ScalarField, body: ConvexBody | None,
                               phis: Sequence[VectorField]) -> VariationEstimate:
    """``max_phi int_O u div phi d gamma`` over admissible test fields.

    Every ``phi`` must satisfy ``|phi| <= 1`` and vanish within two cells of
    the boundary of the admissible set; the result never exceeds the true
    variation beyond quadrature error.
    """
    m = admissible(u, body)
    band = _support_band(m)
    best = 0.0 if not phis else -math.inf
    for k, phi in enumerate(phis):
        if phi.grid != u.grid:
            raise GridError("test field lives on a different grid")
        vals = np.where(phi.active, phi.values, 0.0)
        if np.any(np.sqrt(np.sum(vals**2, axis=0)) > 1.0 + 1e-12):
            raise ValueError(f"test field {k} exceeds unit norm")
        if np.any(vals[:, band | ~m] != 0.0):
            raise ValueError(f"test field {k} does not vanish near the boundary")
        div = gaussian_divergence(VectorField(u.grid, vals))
        val = float(np.sum((u.values * div.values)[m] * u.grid.weights[m]))
        best = max(best, val)
    return VariationEstimate(best, "dual", u.grid.h, u.grid.tail)


def bump_field(grid: GaussianGrid, center, width: float, direction) -> VectorField:
    """``direction * exp(1 - 1/(1 - |y-c|^2/w^2))``: smooth, peak value one."""
    c = np.asarray(center, dtype=float).reshape(grid.dim)
    e = np.asarray(direction, dtype=float).reshape(grid.dim)
    e = e / np.linalg.norm(e)
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c)) / width**2
    prof = np.zeros(grid.shape)
    inside = r2 < 1.0
    prof[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return VectorField(grid, e.reshape((grid.dim,) + (1,) * grid.dim) * prof)


def bump_family(grid: GaussianGrid, body: ConvexBody | None, centers, widths,
                directions) -> list[VectorField]:
    """All bumps from the product of parameters that are admissible test fields."""
    mask = body.grid_mask(grid) if body is not None else np.ones(grid.shape, bool)
    band = _support_band(mask) | ~mask
    out = []
    for c in centers:
        for w in widths:
            for e in directions:
                phi = bump_field(grid, c, w, e)
                if not np.any(phi.values[:, band] != 0.0):
                    out.append(phi)
    return out


def ramp_cutoff(grid: GaussianGrid, R: float) -> np.ndarray:
    """Radial ramp: one on ``B_R``, zero outside ``B_2R``, slope ``1/R``."""
    r = np.sqrt(sum(c**2 for c in grid.coords))
    return np.clip(2.0 - r / R, 0.0, 1.0)


def regularized_variation(u: ScalarField, R: float, body: ConvexBody | None = None) -> float:
    """``int_O theta_R sqrt(|grad u|^2 + 1/R) d gamma``."""
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    m = admissible(u, body)
    grad = masked_gradient(u.values, m, u.grid.h)
    integrand = ramp_cutoff(u.grid, R) * np.sqrt(np.sum(grad**2, axis=0) + 1.0 / R)
    return float(np.sum(integrand[m] * u.grid.weights[m]))


@dataclass(frozen=True)
class SmoothingInfo:
    cutoff_radius: float
    eta: float
    l2_distance: float
    variation: float
    reference: float


def _mollify(grid: GaussianGrid, vals: np.ndarray, mask: np.ndarray, eta: np.ndarray) -> np.ndarray:
    out = np.array(vals, dtype=float)
    todo = mask & (eta > 0)
    if not todo.any():
        return out
    eta_max = float(eta[todo].max())
    n_q = {1: 65, 2: 17, 3: 7}[grid.dim]
    n_q = int(min(n_q, max(9, 2 * math.ceil(2 * eta_max / grid.h) + 1)))
    nodes, wts = mollifier_rule(grid.dim, n_q)
    pts = grid.points[todo.ravel()]
    e = eta[todo][:, None]
    acc = np.zeros(len(pts))
    for z, w in zip(nodes, wts):
        acc += w * interpolate(grid, vals, pts - e * z)
    out[todo] = acc
    return out


def meyers_serrin_approximate(u: ScalarField, eps: float, body: ConvexBody | None = None,
                              full_output: bool = False):
    """Smooth ``v`` with ``||u - v||_{L^2(O)} < eps`` and variation close to that of ``u``.

    ``u`` is first cut off at the smallest integer radius ``R`` for which
    the cut-off costs at most ``eps/4`` in ``L^2`` and in variation, then
    mollified with a radius ``min(eta0, dist(x, boundary)/2 - margin)`` so
    that every averaging ball stays inside the body.  ``eta0`` starts at
    ``eps`` and is halved until the ``L^2`` change is below ``eps/2`` and
    the variation moves by less than ``eps/2``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = u.grid
    m = admissible(u, body)
    vals = np.where(m, u.values, 0.0)
    ref = sobolev_variation(ScalarField(g, vals, m)).value

    r = np.sqrt(sum(c**2 for c in g.coords))
    r_max = float(r[m].max()) if m.any() else 0.0
    R = 1
    while True:
        theta = np.clip(R - r, 0.0, 1.0)
        l2_cut = math.sqrt(float(np.sum(((1 - theta) * vals)[m] ** 2 * g.weights[m])))
        ring = m & (r > R - 1) & (r < R)
        var_cut = 2.0 * float(np.sum(np.abs(vals[ring]) * g.weights[ring]))
        if (l2_cut <= eps / 4 and var_cut <= eps / 4) or R > r_max + 1:
            break
        R += 1
    v = theta * vals

    pts = g.points
    dist = body.interior_distance(pts).reshape(g.shape) if body is not None else np.full(g.shape, np.inf)
    margin = 2.0 * g.h * math.sqrt(g.dim)
    local = np.clip(dist / 2.0 - margin, 0.0, None)
    eta0 = float(eps)
    while True:
        if eta0 < 2.0 * g.h:
            raise GridResolutionError(
                f"eps={eps} needs a mollification radius below 2h={2 * g.h:.3g}; refine the grid")
        w = _mollify(g, v, m, np.minimum(local, eta0))
        l2 = math.sqrt(float(np.sum((w - vals)[m] ** 2 * g.weights[m])))
        var = sobolev_variation(ScalarField(g, w, m)).value
        if l2 < eps * 0.75 and abs(var - ref) < eps / 2:
            break
        eta0 /= 2.0
    out = ScalarField(g, np.where(m, w, np.nan), m)
    if full_output:
        return out, SmoothingInfo(float(R), eta0, l2, var, ref)
    return out


def conditional_expectation(u: ScalarField, m: int) -> ScalarField:
    """Gaussian average over the last ``dim - m`` coordinates.

    Quadrature weights are renormalised per axis, so constants are
    reproduced exactly and the map is a projection.
    """
    g = u.grid
    if not 1 <= m < g.dim:
        raise ValueError(f"need 1 <= m < dim={g.dim}, got m={m}")
    if u.mask is not None and not u.mask.all():
        raise GridError("conditional expectation needs an unmasked field")
    w = g.weights_1d / g.weights_1d.sum()
    vals = u.values
    for ax in range(g.dim - 1, m - 1, -1):
        vals = np.tensordot(vals, w, axes=([ax], [0]))
    vals = vals.reshape(vals.shape + (1,) * (g.dim - m))
    return ScalarField(g, np.broadcast_to(vals, g.shape))


def bv_norm(u: ScalarField, body: ConvexBody | None = None, method: str = "sobolev",
            jumps: Sequence[Jump] | None = None) -> float:
    """``||u||_{L^1(gamma)} + |D_gamma u|(O)``."""
    m = admissible(u, body)
    l1 = float(np.sum(np.abs(u.values[m]) * u.grid.weights[m]))
    if method == "sobolev":
        var = sobolev_variation(u, body).value
    elif method == "jump":
        if body is None:
            raise ValueError("the jump method needs a body")
        var = jump_variation(jumps or [], body).value
    else:
        raise ValueError(f"unknown variation method {method!r}")
    return l1 + var
