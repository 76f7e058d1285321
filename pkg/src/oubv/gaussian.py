"""Standard Gaussian measure on truncated Cartesian grids.

A :class:`GaussianGrid` is the lattice ``h * Z^d`` restricted to the box
``[-L, L]^d``; every node carries the quadrature weight ``G_d(node) h^d``.
Fields live on grids as plain ``numpy`` arrays of shape ``grid.shape``
(scalars) or ``(d,) + grid.shape`` (vectors), optionally masked to the
nodes of a convex body.

The whole-space Ornstein-Uhlenbeck semigroup is available through the
Mehler formula (:func:`mehler_apply`) and serves as an oracle for the
domain solvers in :mod:`oubv.neumann`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

if TYPE_CHECKING:
    from .geometry import ConvexBody

DEFAULT_MAX_NODES = 20_000_000
# default truncation half-widths per dimension
DEFAULT_HALF_WIDTH = {1: 8.0, 2: 6.0, 3: 6.0}

_MEHLER_CHUNK = 2_000_000


class GridError(ValueError):
    """Raised for inconsistent grid parameters or grid/field mismatches."""


def gaussian_density(x, d: int | None = None):
    """Standard Gaussian density ``(2 pi)^(-d/2) exp(-|x|^2 / 2)``.

    ``x`` is either a single point (shape ``(d,)`` or a scalar for ``d=1``)
    or a stack of points with the coordinate on the last axis.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if d is None:
        d = x.shape[-1]
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if x.shape[-1] != d:
        raise ValueError(f"point has {x.shape[-1]} coordinates, expected {d}")
    r2 = np.sum(x * x, axis=-1)
    out = (2.0 * math.pi) ** (-d / 2.0) * np.exp(-0.5 * r2)
    return float(out) if out.ndim == 0 else out


def tail_mass(L: float, d: int) -> float:
    """Gaussian mass of the complement of ``[-L, L]^d``."""
    eps = math.erfc(L / math.sqrt(2.0))
    return -math.expm1(d * math.log1p(-eps))


def aliasing_excess(h: float, d: int) -> float:
    """Upper bound on the amount by which the untruncated lattice sum of
    ``G_d h^d`` exceeds one (Poisson summation)."""
    q = math.exp(-2.0 * math.pi**2 / h**2)
    return (1.0 + 2.0 * q / (1.0 - q)) ** d - 1.0 if q > 0 else 0.0


@dataclass(frozen=True)
class GaussianGrid:
    """Uniform lattice on ``[-L, L]^dim`` with Gaussian node weights."""

    dim: int
    L: float
    h: float
    n: int

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays, one per dimension, each of shape ``self.shape``."""
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """All nodes as an ``(size, dim)`` array in C order."""
        return np.stack([c.ravel() for c in self.coords], axis=-1)

    @cached_property
    def weights_1d(self) -> np.ndarray:
        return gaussian_density(self.axis[:, None], 1) * self.h

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.weights_1d
        out = w
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, w)
        return out

    @property
    def tail(self) -> float:
        return tail_mass(self.L, self.dim)

    def weight_sum_bounds(self) -> tuple[float, float]:
        """Interval guaranteed to contain ``weights.sum()``."""
        return 1.0 - self.tail, 1.0 + aliasing_excess(self.h, self.dim)

    def field(self, fn: Callable[..., np.ndarray], mask: np.ndarray | None = None) -> ScalarField:
        """Sample ``fn(x1, ..., xd)`` at the nodes."""
        vals = np.broadcast_to(np.asarray(fn(*self.coords), dtype=float), self.shape)
        return ScalarField(self, vals, mask)

    def constant(self, c: float, mask: np.ndarray | None = None) -> ScalarField:
        return ScalarField(self, np.full(self.shape, float(c)), mask)

    def index_of(self, x: np.ndarray) -> np.ndarray:
        """Nearest lattice multi-index for points ``x`` (last axis = coordinate)."""
        return np.rint((np.asarray(x, dtype=float) + self.L) / self.h).astype(int)


def build_grid(d: int, L: float | None = None, h: float = 0.0625,
               max_nodes: int = DEFAULT_MAX_NODES) -> GaussianGrid:
    """Build the lattice on ``[-L, L]^d`` with spacing ``h``.

    ``L`` is snapped down so that ``2L/h`` is an integer.
    """
    if d not in (1, 2, 3):
        raise GridError(f"dimension must be 1, 2 or 3, got {d}")
    if L is None:
        L = DEFAULT_HALF_WIDTH[d]
    if not (L > 0 and h > 0):
        raise GridError(f"need L > 0 and h > 0, got L={L}, h={h}")
    if h > L:
        raise GridError(f"spacing h={h} exceeds half-width L={L}")
    cells = int(math.floor(2.0 * L / h + 1e-9))
    n = cells + 1
    if n**d > max_nodes:
        raise GridError(f"{n**d} nodes exceed the cap of {max_nodes}")
    return GaussianGrid(dim=d, L=cells * h / 2.0, h=float(h), n=n)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=a.dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One value per node; ``mask`` marks the admissible nodes (all if None)."""

    grid: GaussianGrid
    values: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"values of shape {vals.shape} on a grid of shape {self.grid.shape}")
        object.__setattr__(self, "values", _readonly(vals))
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != self.grid.shape:
                raise GridError("mask shape does not match grid")
            object.__setattr__(self, "mask", _readonly(m))
        if not np.all(np.isfinite(self.values[self.active])):
            raise ValueError("field has non-finite values at admissible nodes")

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.grid.shape, bool) if self.mask is None else self.mask

    def with_values(self, values: np.ndarray) -> ScalarField:
        return ScalarField(self.grid, values, self.mask)

    def restrict(self, mask: np.ndarray) -> ScalarField:
        """Same values, admissible set intersected with ``mask``; other nodes set to nan."""
        m = np.asarray(mask, bool) & self.active
        return ScalarField(self.grid, np.where(m, self.values, np.nan), m)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``dim`` components per node, stored as ``(dim,) + grid.shape``."""

    grid: GaussianGrid
    values: np.ndarray
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.dim,) + self.grid.shape:
            raise GridError(f"vector values of shape {vals.shape} on grid {self.grid.shape}")
        object.__setattr__(self, "values", _readonly(vals))
        if self.mask is not None:
            object.__setattr__(self, "mask", _readonly(np.asarray(self.mask, dtype=bool)))
        if not np.all(np.isfinite(self.norm()[self.active])):
            raise ValueError("vector field has non-finite values at admissible nodes")

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.grid.shape, bool) if self.mask is None else self.mask

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))


def admissible(f: ScalarField, body: ConvexBody | None = None) -> np.ndarray:
    """Nodes over which ``f`` is integrated: its mask, intersected with ``body``."""
    m = f.active
    if body is not None:
        if body.dim != f.grid.dim:
            raise GridError(f"body of dimension {body.dim} on a {f.grid.dim}-d grid")
        m = m & body.grid_mask(f.grid)
    return m


def gaussian_integrate(f: ScalarField, body: ConvexBody | None = None) -> float:
    """Quadrature of ``f`` against the Gaussian measure over admissible nodes."""
    m = admissible(f, body)
    return float(np.sum(f.values[m] * f.grid.weights[m]))


def l2_norm(f: ScalarField, body: ConvexBody | None = None) -> float:
    m = admissible(f, body)
    return math.sqrt(float(np.sum(f.values[m] ** 2 * f.grid.weights[m])))


def interpolate(grid: GaussianGrid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal ``values`` at ``pts`` (shape ``(m, d)``).

    Points outside the box take the value at the nearest boundary point.
    """
    pts = np.asarray(pts, dtype=float)
    if grid.dim == 1:
        return np.interp(pts[:, 0], grid.axis, values)
    s = (pts + grid.L) / grid.h
    s = np.clip(s, 0.0, grid.n - 1)
    i0 = np.minimum(np.floor(s).astype(np.intp), grid.n - 2)
    frac = s - i0
    out = np.zeros(pts.shape[0])
    for corner in np.ndindex(*(2,) * grid.dim):
        c = np.asarray(corner)
        wt = np.prod(np.where(c, frac, 1.0 - frac), axis=1)
        idx = tuple((i0 + c).T)
        out += wt * values[idx]
    return out


def mehler_apply(f: ScalarField, t: float) -> ScalarField:
    """Whole-space Ornstein-Uhlenbeck semigroup via the Mehler formula.

    ``T_t f(x) = E f(e^{-t} x + sqrt(1 - e^{-2t}) Y)``, ``Y`` standard
    Gaussian, with the expectation taken by the grid quadrature (weights
    renormalised to a probability) and ``f`` read off the grid by
    multilinear interpolation with constant extension.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if f.mask is not None and not f.mask.all():
        raise GridError("mehler_apply needs a field defined on the whole grid")
    if t == 0:
        return f
    g = f.grid
    a = math.exp(-t)
    s = math.sqrt(-math.expm1(-2.0 * t))
    w = g.weights.ravel()
    keep = w > 0
    w = w[keep] / w[keep].sum()
    y = g.points[keep]
    x = g.points
    out = np.empty(g.size)
    rows = max(1, _MEHLER_CHUNK // y.shape[0])
    for start in range(0, g.size, rows):
        xs = x[start:start + rows]
        q = (a * xs[:, None, :] + s * y[None, :, :]).reshape(-1, g.dim)
        vals = interpolate(g, f.values, q).reshape(xs.shape[0], -1)
        out[start:start + rows] = vals @ w
    return ScalarField(g, out.reshape(g.shape))


def write_field_csv(f: ScalarField, path: str | Path) -> None:
    """Write admissible nodes as ``x1[,x2[,x3]],value``."""
    g = f.grid
    header = [f"x{i + 1}" for i in range(g.dim)] + ["value"]
    m = f.active.ravel()
    pts = g.points[m]
    vals = f.values.ravel()[m]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for p, v in zip(pts, vals):
            wr.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def read_field_csv(path: str | Path, grid: GaussianGrid) -> ScalarField:
    """Read a field written by :func:`write_field_csv` onto ``grid``.

    Coordinates must sit on the lattice; nodes absent from the file are
    masked out.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    expected = [f"x{i + 1}" for i in range(grid.dim)] + ["value"]
    if [c.strip() for c in header] != expected:
        raise GridError(f"expected header {','.join(expected)}, got {','.join(header)}")
    data = np.array([[float(c) for c in r] for r in body if r], dtype=float).reshape(-1, grid.dim + 1)
    idx = grid.index_of(data[:, :-1])
    if np.any(idx < 0) or np.any(idx >= grid.n):
        raise GridError("field file has nodes outside the grid")
    snapped = -grid.L + grid.h * idx
    if np.max(np.abs(snapped - data[:, :-1]), initial=0.0) > 1e-6 * grid.h:
        raise GridError("field file coordinates are not on the grid lattice")
    vals = np.full(grid.shape, np.nan)
    mask = np.zeros(grid.shape, bool)
    vals[tuple(idx.T)] = data[:, -1]
    mask[tuple(idx.T)] = True
    return ScalarField(grid, vals, None if mask.all() else mask)
