"""Convex bodies, Minkowski gauges and their smooth convex approximants.

Bodies are immutable and carry an interior center ``x0`` together with a
certified inradius ``r`` (the ball ``B_r(x0)`` lies inside).  Three
representations are provided:

* :class:`HalfspaceBody` -- finite intersection ``{a_j . x <= b_j}``,
  gauge in closed form;
* :class:`BallBody` -- Euclidean ball, gauge ``|x - c| / rho``;
* :class:`SmoothBody` -- sublevel set ``{m_eta <= 1}`` of the mollified
  gauge of a dilated base body.

The gauge of every body satisfies ``gauge(x) <= 1`` iff ``x`` lies in the
closed body; the open body (used for grid masks) is ``gauge(x) < 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.spatial import cKDTree

from .gaussian import GaussianGrid

RAY_TOL = 1e-10
_S_MAX = 1e6


class GeometryError(ValueError):
    """Raised for degenerate bodies or queries outside an operation's domain."""


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 or (dim == 1 and x.ndim == 0)
    pts = x.reshape(-1, dim)
    return pts, single


# ---------------------------------------------------------------- mollifier

def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 / (s[inside] ** 2 - 1.0))
    return out


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@lru_cache(maxsize=None)
def mollifier_constant(d: int) -> float:
    """``c_d`` with ``c_d * exp(1/(|u|^2-1))`` integrating to one on the unit ball."""
    val, _ = integrate.quad(lambda s: math.exp(1.0 / (s * s - 1.0)) * s ** (d - 1), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13)
    return 1.0 / (_sphere_area(d) * val)


@lru_cache(maxsize=None)
def mollifier_first_moment(d: int) -> float:
    """``int |u| rho(u) du`` for the standard bump mollifier."""
    val, _ = integrate.quad(lambda s: math.exp(1.0 / (s * s - 1.0)) * s**d, 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13)
    return mollifier_constant(d) * _sphere_area(d) * val


@lru_cache(maxsize=None)
def mollifier_rule(d: int, n: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule for ``int f(u) rho(u) du``.

    Returns nodes of shape ``(k, d)`` inside the unit ball and positive
    weights summing to one.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = np.stack([g.ravel() for g in np.meshgrid(*([x] * d), indexing="ij")], axis=-1)
    wts = np.ones(len(nodes))
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * g.ravel()
    wts = wts * _bump(np.linalg.norm(nodes, axis=1))
    keep = wts > 0
    nodes, wts = nodes[keep], wts[keep]
    nodes.setflags(write=False)
    wts = wts / wts.sum()
    wts.setflags(write=False)
    return nodes, wts


# ------------------------------------------------------------------- bodies

class ConvexBody:
    """Common interface; see the module docstring."""

    dim: int
    center: np.ndarray
    inradius: float

    def __init__(self, dim: int, center, inradius: float):
        self.dim = int(dim)
        c = np.asarray(center, dtype=float).reshape(self.dim).copy()
        c.setflags(write=False)
        self.center = c
        self.inradius = float(inradius)
        if not self.inradius > 0:
            raise GeometryError("body has empty interior (nonpositive inradius)")
        self._mask_cache: dict[GaussianGrid, np.ndarray] = {}

    def _gauge(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gauge(self, x):
        """Minkowski gauge about ``self.center`` (mollified for smooth bodies)."""
        pts, single = _as_points(x, self.dim)
        out = self._gauge(pts)
        return float(out[0]) if single else out

    def contains(self, x):
        return np.asarray(self.gauge(x)) <= 1.0

    def interior_distance(self, x) -> np.ndarray:
        """Lower bound on the distance from interior points to the complement."""
        pts, _ = _as_points(x, self.dim)
        return np.maximum(self.inradius * (1.0 - self._gauge(pts)), 0.0)

    def grid_mask(self, grid: GaussianGrid) -> np.ndarray:
        """Boolean array of grid nodes in the open body (``gauge < 1``)."""
        if grid.dim != self.dim:
            raise GeometryError(f"body of dimension {self.dim} on a {grid.dim}-d grid")
        m = self._mask_cache.get(grid)
        if m is None:
            m = (self._gauge(grid.points) < 1.0).reshape(grid.shape)
            m.setflags(write=False)
            self._mask_cache[grid] = m
        return m

    def ray_exit(self, directions: np.ndarray) -> np.ndarray:
        """Distance from the center to the boundary along unit ``directions``
        (``inf`` where the ray never leaves the body)."""
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        lo = np.zeros(len(d))
        hi = np.full(len(d), max(self.inradius, 1e-3))
        unbounded = np.zeros(len(d), bool)
        pending = self._gauge(self.center + hi[:, None] * d) <= 1.0
        while pending.any():
            lo[pending] = hi[pending]
            hi[pending] *= 2.0
            escaped = pending & (hi > _S_MAX)
            unbounded |= escaped
            pending &= ~escaped
            idx = np.flatnonzero(pending)
            pending[idx] = self._gauge(self.center + hi[idx, None] * d[idx]) <= 1.0
        live = ~unbounded
        while np.any(hi[live] - lo[live] > RAY_TOL):
            mid = 0.5 * (lo + hi)
            inside = self._gauge(self.center + mid[:, None] * d) <= 1.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        s = 0.5 * (lo + hi)
        s[unbounded] = np.inf
        return s


class HalfspaceBody(ConvexBody):
    """Intersection of half-spaces ``normals[j] . x <= offsets[j]``."""

    def __init__(self, normals, offsets, center=None):
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.asarray(offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise GeometryError("normals and offsets differ in length")
        nrm = np.linalg.norm(A, axis=1)
        if np.any(nrm == 0):
            raise GeometryError("zero normal vector")
        A, b = A / nrm[:, None], b / nrm
        if center is None:
            center = _default_center(A, b)
        center = np.asarray(center, dtype=float).reshape(A.shape[1])
        slack = b - A @ center
        if np.any(slack <= 0):
            raise GeometryError("center is not strictly inside every half-space")
        A.setflags(write=False)
        b.setflags(write=False)
        self.normals, self.offsets = A, b
        self._slack = slack
        super().__init__(A.shape[1], center, float(slack.min()))

    def _gauge(self, pts):
        ratios = ((pts - self.center) @ self.normals.T) / self._slack
        return np.maximum(ratios.max(axis=1), 0.0)

    def interior_distance(self, x):
        pts, _ = _as_points(x, self.dim)
        return np.maximum((self.offsets - pts @ self.normals.T).min(axis=1), 0.0)

    def dilated(self, delta: float) -> HalfspaceBody:
        """Offset every face outward by ``delta`` (contains the Euclidean enlargement)."""
        return HalfspaceBody(self.normals, self.offsets + delta, self.center)

    def ray_exit(self, directions):
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        g = self._gauge(self.center + d)
        with np.errstate(divide="ignore"):
            return np.where(g > 0, 1.0 / g, np.inf)

    def active_faces(self, x, tol: float = 1e-7) -> np.ndarray:
        pts, _ = _as_points(x, self.dim)
        ratios = ((pts - self.center) @ self.normals.T) / self._slack
        return ratios >= ratios.max(axis=1, keepdims=True) - tol

    def __repr__(self):
        return f"HalfspaceBody(dim={self.dim}, faces={len(self.offsets)}, r={self.inradius:.4g})"


class BallBody(ConvexBody):
    def __init__(self, radius: float, center=None, dim: int | None = None):
        if center is None:
            center = np.zeros(dim if dim is not None else 2)
        center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        super().__init__(center.shape[0], center, self.radius)

    def _gauge(self, pts):
        return np.linalg.norm(pts - self.center, axis=1) / self.radius

    def interior_distance(self, x):
        pts, _ = _as_points(x, self.dim)
        return np.maximum(self.radius - np.linalg.norm(pts - self.center, axis=1), 0.0)

    def dilated(self, delta: float) -> BallBody:
        return BallBody(self.radius + delta, self.center)

    def ray_exit(self, directions):
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        return np.full(len(d), self.radius)

    def __repr__(self):
        return f"BallBody(dim={self.dim}, radius={self.radius:.4g})"


class SmoothBody(ConvexBody):
    """``{x : (m * rho_eta)(x) <= 1}`` with ``m`` the gauge of the base body
    dilated by ``delta``."""

    def __init__(self, base: HalfspaceBody | BallBody, delta: float, eta: float, n_quad: int = 9):
        self.base = base
        self.delta = float(delta)
        self.eta = float(eta)
        self.n_quad = n_quad
        self.enlarged = base.dilated(self.delta)
        self._nodes, self._weights = mollifier_rule(base.dim, n_quad)
        super().__init__(base.dim, base.center, base.inradius)

    def _gauge(self, pts):
        out = np.zeros(len(pts))
        for z, w in zip(self._nodes, self._weights):
            out += w * self.enlarged._gauge(pts - self.eta * z)
        return out

    def __repr__(self):
        return f"SmoothBody({self.base!r}, delta={self.delta:.4g}, eta={self.eta:.4g})"


def _default_center(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Origin when it is interior; otherwise a Chebyshev center (capped radius)."""
    d = A.shape[1]
    if np.all(b > 0):
        return np.zeros(d)
    # maximise r subject to a_j . x + r <= b_j, |x_i| <= 1e3, r <= 1e3
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b, bounds=[(-1e3, 1e3)] * d + [(0, 1e3)])
    if not res.success or res.x[-1] <= 0:
        raise GeometryError("half-space intersection has empty interior")
    return res.x[:d]


# --------------------------------------------------------------- operations

def minkowski_eval(body: ConvexBody, x):
    """Gauge ``inf{lam >= 0 : x - x0 in lam (C - x0)}``; mollified for smooth bodies."""
    return body.gauge(x)


def smooth_body(body: ConvexBody, delta: float, eta: float | None = None,
                n_quad: int = 9, check_rays: int = 256) -> SmoothBody:
    """Smooth convex superset ``C_delta`` of ``body``.

    The base is enlarged by ``delta`` and its gauge mollified at radius
    ``eta`` (default ``delta``).  Strict containment of ``body`` is checked
    on ``check_rays`` boundary samples.
    """
    if isinstance(body, SmoothBody):
        raise GeometryError("body is already smooth; smooth its base instead")
    r = body.inradius
    if not r > 0:
        raise GeometryError("body has empty interior")
    if not 0 < delta < r / 4.0:
        raise GeometryError(f"delta={delta} violates 0 < delta < r/4 = {r / 4.0}")
    if not delta * mollifier_first_moment(body.dim) < r / 2.0:
        raise GeometryError("delta * int |u| rho(u) du must stay below r/2")
    eta = delta if eta is None else float(eta)
    if not 0 < eta <= delta:
        raise GeometryError("mollification radius must lie in (0, delta]")
    out = SmoothBody(body, delta, eta, n_quad)
    pts = boundary_points(body, check_rays)
    if len(pts) and not np.all(out._gauge(pts) < 1.0):
        raise GeometryError("smoothed body fails to contain the base body strictly")
    return out


def gauge_gradient(body: ConvexBody, x, h_geo: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the gauge; shape ``(m, d)``."""
    pts, _ = _as_points(x, body.dim)
    g = np.empty_like(pts)
    for i in range(body.dim):
        e = np.zeros(body.dim)
        e[i] = h_geo
        g[:, i] = (body._gauge(pts + e) - body._gauge(pts - e)) / (2.0 * h_geo)
    return g


def outward_normal(body: ConvexBody, x, h_geo: float = 1e-6, boundary_tol: float = 1e-6,
                   grad_floor: float = 1e-8) -> np.ndarray:
    """Unit outer normal ``grad m / |grad m|`` at a boundary point."""
    x = np.asarray(x, dtype=float).reshape(body.dim)
    m = body.gauge(x)
    if abs(m - 1.0) > boundary_tol:
        raise GeometryError(f"point is not on the boundary (gauge={m:.3g})")
    if isinstance(body, HalfspaceBody) and body.active_faces(x, tol=max(boundary_tol, 10 * h_geo)).sum() > 1:
        raise GeometryError("normal undefined: point lies on an edge or corner")
    g = gauge_gradient(body, x, h_geo)[0]
    norm = float(np.linalg.norm(g))
    if norm < grad_floor:
        raise GeometryError("gauge gradient vanishes (point on the recession cone boundary)")
    return g / norm


def sphere_directions(dim: int, n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit directions."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + math.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def boundary_points(body: ConvexBody, n_dirs: int = 720, R: float | None = None) -> np.ndarray:
    """Boundary samples found along rays from the center, clipped to ``|p| <= R``."""
    dirs = sphere_directions(body.dim, n_dirs)
    s = body.ray_exit(dirs)
    pts = body.center + s[np.isfinite(s), None] * dirs[np.isfinite(s)]
    if R is not None:
        pts = pts[np.linalg.norm(pts, axis=1) <= R]
    return pts


@dataclass(frozen=True)
class HausdorffEstimate:
    value: float
    resolution: float
    samples: tuple[int, int]


def _spacing(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].max())


def hausdorff_boundary_distance(a: ConvexBody, b: ConvexBody, R: float,
                                n_dirs: int = 2048) -> HausdorffEstimate:
    """Symmetric Hausdorff distance between boundary samples inside ``B_R``.

    ``resolution`` is the larger sample spacing of the two sets; the sampled
    value is within that amount of the distance between the true sets.
    """
    if a.dim != b.dim:
        raise GeometryError("bodies have different dimensions")
    if not R > 0:
        raise GeometryError("clipping radius must be positive")
    pa, pb = boundary_points(a, n_dirs, R), boundary_points(b, n_dirs, R)
    if len(pa) == 0 or len(pb) == 0:
        raise GeometryError("a boundary has no samples inside the clipping ball")
    dab = cKDTree(pb).query(pa)[0].max()
    dba = cKDTree(pa).query(pb)[0].max()
    return HausdorffEstimate(float(max(dab, dba)), max(_spacing(pa), _spacing(pb)), (len(pa), len(pb)))


def cylindrical_approximation(halfspaces: Sequence[tuple[Sequence[float], float]], n: int,
                              delta_n: float, center=None, **kw) -> SmoothBody:
    """Smoothed intersection of the first ``n`` half-spaces ``(a, b)``."""
    if not 1 <= n <= len(halfspaces):
        raise GeometryError(f"n={n} outside 1..{len(halfspaces)}")
    A = np.array([np.asarray(a, dtype=float) for a, _ in halfspaces[:n]])
    b = np.array([float(bj) for _, bj in halfspaces[:n]])
    try:
        base = HalfspaceBody(A, b, center)
    except GeometryError as exc:
        raise GeometryError(f"empty interior after intersecting {n} half-spaces") from exc
    return smooth_body(base, delta_n, **kw)


def regular_polygon_halfspaces(m: int, radius: float = 1.0, phase: float = 0.0) -> list[tuple[np.ndarray, float]]:
    """Faces of the regular ``m``-gon whose edges touch the circle of ``radius``."""
    th = phase + 2.0 * np.pi * np.arange(m) / m
    return [(np.array([math.cos(t), math.sin(t)]), float(radius)) for t in th]


def boundary_gradient_bound(body: ConvexBody, n_dirs: int = 512, h_geo: float = 1e-6) -> tuple[float, float]:
    """Minimum over boundary samples of ``|grad m|`` and of ``<grad m, x - x0>``."""
    pts = boundary_points(body, n_dirs)
    g = gauge_gradient(body, pts, h_geo)
    radial = np.einsum("ij,ij->i", g, pts - body.center)
    return float(np.linalg.norm(g, axis=1).min()), float(radial.min())


def nested_on_samples(outer: ConvexBody, inner: ConvexBody, n_dirs: int = 512) -> bool:
    """True when every boundary sample of ``inner`` lies in ``outer``."""
    pts = boundary_points(inner, n_dirs)
    return bool(np.all(outer.gauge(pts) <= 1.0))


# ------------------------------------------------------------------ parsing

def box_body(dim: int, half: float) -> HalfspaceBody:
    eye = np.eye(dim)
    return HalfspaceBody(np.vstack([eye, -eye]), np.full(2 * dim, float(half)))


def interval_body(a: float, b: float) -> HalfspaceBody:
    if not a < b:
        raise GeometryError(f"empty interval ({a}, {b})")
    center = 0.0 if a < 0 < b else 0.5 * (a + b)
    return HalfspaceBody([[1.0], [-1.0]], [b, -a], [center])


def read_body_file(path: str | Path) -> ConvexBody:
    """Parse ``halfspace a1 .. ad b`` lines plus optional ``center``/``smooth delta eta``."""
    normals, offsets, center, smooth = [], [], None, None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        nums = [float(v) for v in vals]
        if key == "halfspace":
            normals.append(nums[:-1])
            offsets.append(nums[-1])
        elif key == "center":
            center = nums
        elif key == "smooth":
            smooth = nums
        else:
            raise GeometryError(f"unknown body directive {key!r}")
    if not normals:
        raise GeometryError("body file declares no half-spaces")
    if len({len(a) for a in normals}) != 1:
        raise GeometryError("half-space normals have inconsistent dimension")
    body = HalfspaceBody(normals, offsets, center)
    if smooth:
        body = smooth_body(body, smooth[0], smooth[1] if len(smooth) > 1 else None)
    return body


def parse_domain(spec: str, dim: int) -> ConvexBody:
    """Domain from ``interval:a,b``, ``ball:r``, ``square:s``, ``polygon:m[,r]``,
    ``strip:a`` or a ``.body`` file path (optionally ``file:`` prefixed)."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "file" or spec.endswith(".body"):
        body = read_body_file(arg if kind == "file" else spec)
    elif kind == "interval":
        a, b = (float(v) for v in arg.split(","))
        if dim != 1:
            raise GeometryError("interval domains are one-dimensional")
        body = interval_body(a, b)
    elif kind == "ball":
        body = BallBody(float(arg), np.zeros(dim))
    elif kind in ("square", "box", "cube"):
        body = box_body(dim, float(arg))
    elif kind == "polygon":
        parts = arg.split(",")
        if dim != 2:
            raise GeometryError("polygon domains are two-dimensional")
        hs = regular_polygon_halfspaces(int(parts[0]), float(parts[1]) if len(parts) > 1 else 1.0)
        body = HalfspaceBody([a for a, _ in hs], [b for _, b in hs])
    elif kind == "strip":
        e = np.zeros(dim)
        e[0] = 1.0
        body = HalfspaceBody([e, -e], [float(arg)] * 2)
    else:
        raise GeometryError(f"unknown domain kind {kind!r}")
    if body.dim != dim:
        raise GeometryError(f"domain has dimension {body.dim}, expected {dim}")
    return body
