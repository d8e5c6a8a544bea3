"""Grid, field containers, boundary classification, and the discrete
derivative/norm primitives shared by every solver.

Conventions used throughout the package:

* the mesh is a uniform lattice of nx*ny collocation points covering a
  rectangle; the outermost ring of points lies on the physical boundary
  and carries the prescribed traces (this is what makes Dirichlet rows
  and the boundary estimates exact),
* scalar fields are arrays of shape (nx, ny) indexed [i, j] with
  x = x0 + i*hx and y = y0 + j*hy,
* vector fields carry 3 components, shape (3, nx, ny), with d/dz == 0,
  so curl, B x n and curl B x B keep their three-dimensional meaning on
  the 2D grid,
* space integrals use the midpoint rule on the dual cells of the lattice
  (each point is the midpoint of its own dual cell, half cells on the
  boundary), which integrates constants exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import (
    AmbiguousInflow,
    DisconnectedInflow,
    EmptyTrajectory,
    MismatchedSampling,
    NonFiniteField,
)


class FaceTag(Enum):
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    WALL = "wall"


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"
    TOP = "top"


# outward unit normals of the rectangle sides (z component kept for cross products)
SIDE_NORMALS = {
    Side.LEFT: np.array([-1.0, 0.0, 0.0]),
    Side.RIGHT: np.array([1.0, 0.0, 0.0]),
    Side.BOTTOM: np.array([0.0, -1.0, 0.0]),
    Side.TOP: np.array([0.0, 1.0, 0.0]),
}

_SIDE_ORDER = [Side.LEFT, Side.RIGHT, Side.BOTTOM, Side.TOP]


@dataclass(frozen=True)
class Extent:
    """Physical rectangle [x0, x1] x [y0, y1]."""

    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def lx(self) -> float:
        return self.x1 - self.x0

    @property
    def ly(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.lx * self.ly


@dataclass
class Grid:
    """Uniform 2D lattice with per-boundary-face metadata.

    The boundary is enumerated once as a closed cycle (bottom edge left to
    right, right edge bottom to top, top edge right to left, left edge top
    to bottom); corners appear exactly once.  ``face_tags`` and ``bd_side``
    are filled by :func:`classify_boundary`; a corner inherits the side
    where |u_B . n| is largest.
    """

    nx: int
    ny: int
    extent: Extent
    face_tags: np.ndarray | None = None  # FaceTag per boundary node, cycle order
    bd_side: np.ndarray | None = None    # assigned Side per boundary node

    # geometry caches, derived in __post_init__
    xs: np.ndarray = field(init=False, repr=False)
    ys: np.ndarray = field(init=False, repr=False)
    xg: np.ndarray = field(init=False, repr=False)
    yg: np.ndarray = field(init=False, repr=False)
    bd_i: np.ndarray = field(init=False, repr=False)
    bd_j: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs nx, ny >= 4, got {self.nx}x{self.ny}")
        if self.extent.lx <= 0 or self.extent.ly <= 0:
            raise ValueError("grid extent must have positive side lengths")
        self.xs = np.linspace(self.extent.x0, self.extent.x1, self.nx)
        self.ys = np.linspace(self.extent.y0, self.extent.y1, self.ny)
        self.xg, self.yg = np.meshgrid(self.xs, self.ys, indexing="ij")
        self.bd_i, self.bd_j = _boundary_cycle(self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.extent.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.extent.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def n_boundary(self) -> int:
        return self.bd_i.size

    def boundary_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return self.xs[self.bd_i], self.ys[self.bd_j]

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.nx, self.ny), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask

    def geometric_sides(self, k: int) -> tuple[Side, ...]:
        """Sides the k-th boundary node lies on (two at a corner)."""
        i, j = int(self.bd_i[k]), int(self.bd_j[k])
        sides = []
        if i == 0:
            sides.append(Side.LEFT)
        if i == self.nx - 1:
            sides.append(Side.RIGHT)
        if j == 0:
            sides.append(Side.BOTTOM)
        if j == self.ny - 1:
            sides.append(Side.TOP)
        return tuple(sides)

    def side_slice(self, side: Side) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) index arrays of all nodes geometrically on a side."""
        if side is Side.LEFT:
            return np.zeros(self.ny, dtype=int), np.arange(self.ny)
        if side is Side.RIGHT:
            return np.full(self.ny, self.nx - 1), np.arange(self.ny)
        if side is Side.BOTTOM:
            return np.arange(self.nx), np.zeros(self.nx, dtype=int)
        return np.arange(self.nx), np.full(self.nx, self.ny - 1)

    def boundary_normals(self) -> np.ndarray:
        """(3, nb) outward normals of the assigned side of each boundary node."""
        if self.bd_side is None:
            raise ValueError("grid boundary has not been classified yet")
        out = np.zeros((3, self.n_boundary))
        for k, side in enumerate(self.bd_side):
            out[:, k] = SIDE_NORMALS[side]
        return out


def _boundary_cycle(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    bi, bj = [], []
    for i in range(nx):                 # bottom, left to right
        bi.append(i); bj.append(0)
    for j in range(1, ny):              # right, bottom to top
        bi.append(nx - 1); bj.append(j)
    for i in range(nx - 2, -1, -1):     # top, right to left
        bi.append(i); bj.append(ny - 1)
    for j in range(ny - 2, 0, -1):      # left, top to bottom
        bi.append(0); bj.append(j)
    return np.array(bi), np.array(bj)


def make_grid(nx: int, ny: int, extent=(0.0, 1.0, 0.0, 1.0)) -> Grid:
    if not isinstance(extent, Extent):
        extent = Extent(*extent)
    return Grid(nx=nx, ny=ny, extent=extent)


def classify_boundary(grid: Grid, u_b, c: float) -> Grid:
    """Tag every boundary face from the start-of-window velocity trace.

    ``u_b`` is either an array of shape (3, nb) in boundary-cycle order or
    a callable (x, y) -> length-3 velocity.  A face is INFLOW iff
    u_B.n <= -c, OUTFLOW iff u_B.n > 0 and WALL otherwise; any face with
    -c < u_B.n < 0 violates the uniform-inflow assumption and raises
    :class:`AmbiguousInflow`.  The inflow faces, when present, must form
    one contiguous segment of the boundary cycle.
    """
    if c <= 0:
        raise ValueError("inflow threshold c must be positive")
    xb, yb = grid.boundary_coords()
    nb = grid.n_boundary
    if callable(u_b):
        vals = np.array([u_b(xb[k], yb[k]) for k in range(nb)], dtype=float).T
    else:
        vals = np.asarray(u_b, dtype=float)
    if vals.shape != (3, nb):
        raise ValueError(f"boundary velocity trace must have shape (3, {nb})")

    tags = np.empty(nb, dtype=object)
    sides = np.empty(nb, dtype=object)
    offenders = []
    for k in range(nb):
        cand = []
        for side in grid.geometric_sides(k):
            un = float(vals[:, k] @ SIDE_NORMALS[side])
            if -c < un < 0.0:
                offenders.append(f"node {k} side {side.value}: u_B.n = {un:.6g}")
            cand.append((side, un))
        # dominant face: largest |u_B.n|; prefer inflow sign, then a fixed side order
        cand.sort(key=lambda sc: (-abs(sc[1]), sc[1], _SIDE_ORDER.index(sc[0])))
        side, un = cand[0]
        sides[k] = side
        if un <= -c:
            tags[k] = FaceTag.INFLOW
        elif un > 0.0:
            tags[k] = FaceTag.OUTFLOW
        else:
            tags[k] = FaceTag.WALL
    if offenders:
        raise AmbiguousInflow(
            "inward boundary velocity weaker than threshold c="
            f"{c}: " + "; ".join(offenders[:8])
        )

    inflow = np.array([t is FaceTag.INFLOW for t in tags])
    if inflow.any() and not _contiguous_on_cycle(inflow):
        raise DisconnectedInflow("inflow faces do not form one boundary segment")

    return replace(grid, face_tags=tags, bd_side=sides)


def _contiguous_on_cycle(mask: np.ndarray) -> bool:
    n = mask.size
    if mask.all():
        return True
    # number of False->True transitions along the closed cycle must be one
    rises = sum(1 for k in range(n) if mask[k] and not mask[k - 1])
    return rises == 1


# ---------------------------------------------------------------------------
# derivative stencils: central second order inside, one-sided second order on
# the boundary; exact for affine fields (first derivatives) and quadratics
# (second derivatives)
# ---------------------------------------------------------------------------

def _d1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def _d2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / (h * h)
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def ddx(f: np.ndarray, grid: Grid) -> np.ndarray:
    return _d1(f, grid.hx, axis=-2)


def ddy(f: np.ndarray, grid: Grid) -> np.ndarray:
    return _d1(f, grid.hy, axis=-1)


def dxx(f: np.ndarray, grid: Grid) -> np.ndarray:
    return _d2(f, grid.hx, axis=-2)


def dyy(f: np.ndarray, grid: Grid) -> np.ndarray:
    return _d2(f, grid.hy, axis=-1)


def dxy(f: np.ndarray, grid: Grid) -> np.ndarray:
    return ddy(ddx(f, grid), grid)


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient of a scalar field as a 3-component vector field (d/dz == 0)."""
    return np.stack([ddx(f, grid), ddy(f, grid), np.zeros_like(f)])


def divergence(v: np.ndarray, grid: Grid) -> np.ndarray:
    return ddx(v[0], grid) + ddy(v[1], grid)


def curl(v: np.ndarray, grid: Grid) -> np.ndarray:
    return np.stack([
        ddy(v[2], grid),
        -ddx(v[2], grid),
        ddx(v[1], grid) - ddy(v[0], grid),
    ])


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    return dxx(f, grid) + dyy(f, grid)


def vector_gradient(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Full gradient tensor G[a, b] = d v_a / d x_b, shape (3, 3, nx, ny)."""
    out = np.zeros((3, 3) + v.shape[1:])
    for a in range(3):
        out[a, 0] = ddx(v[a], grid)
        out[a, 1] = ddy(v[a], grid)
    return out


def sym_grad(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Symmetrized gradient D = (grad v + grad v^T) / 2."""
    g = vector_gradient(v, grid)
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteField(f"{name} contains NaN/Inf values")
    return arr


def side_trapezoid(grid: Grid, side: Side, vals: np.ndarray) -> float:
    """Line integral along one side by the trapezoid rule.

    ``vals`` must be ordered like :meth:`Grid.side_slice` (ascending
    coordinate along the side, corners included).
    """
    h = grid.hy if side in (Side.LEFT, Side.RIGHT) else grid.hx
    w = np.full(len(vals), h)
    w[0] = w[-1] = 0.5 * h
    return float(np.sum(w * vals))


def bilinear_sample(f: np.ndarray, grid: Grid, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a scalar field at arbitrary points.

    Points are clamped into the extent, so callers are responsible for
    handling genuine domain exits before sampling.
    """
    gx = np.clip((px - grid.extent.x0) / grid.hx, 0.0, grid.nx - 1.0)
    gy = np.clip((py - grid.extent.y0) / grid.hy, 0.0, grid.ny - 1.0)
    ix = np.clip(gx.astype(int), 0, grid.nx - 2)
    iy = np.clip(gy.astype(int), 0, grid.ny - 2)
    fx = gx - ix
    fy = gy - iy
    return ((1 - fx) * (1 - fy) * f[ix, iy] + fx * (1 - fy) * f[ix + 1, iy]
            + (1 - fx) * fy * f[ix, iy + 1] + fx * fy * f[ix + 1, iy + 1])


# ---------------------------------------------------------------------------
# discrete norms
# ---------------------------------------------------------------------------

SUP_TIME = "sup_time"
LP_TIME = "lp_time"


@dataclass(frozen=True)
class NormSpec:
    """Selector for the discrete space-time norms.

    ``p`` is the time exponent, ``q`` the space exponent (both in (1, inf]),
    ``order`` the number of derivatives included (0, 1 or 2), ``field``
    names a State attribute when trajectories of States are measured.
    """

    q: float = 2.0
    p: float = math.inf
    field: str | None = None
    aggregation: str = SUP_TIME
    order: int = 0

    def __post_init__(self):
        for name, val in (("p", self.p), ("q", self.q)):
            if not (val > 1.0):
                raise ValueError(f"exponent {name} must lie in (1, inf]")
        if self.order not in (0, 1, 2):
            raise ValueError("derivative order must be 0, 1 or 2")
        if self.aggregation not in (SUP_TIME, LP_TIME):
            raise ValueError(f"unknown time aggregation {self.aggregation!r}")


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Dual-cell areas: hx*hy inside, halved on edges, quartered at corners."""
    wx = np.full(grid.nx, grid.hx)
    wx[0] = wx[-1] = 0.5 * grid.hx
    wy = np.full(grid.ny, grid.hy)
    wy[0] = wy[-1] = 0.5 * grid.hy
    return np.outer(wx, wy)


def lp_norm(f: np.ndarray, grid: Grid, q: float) -> float:
    """Space L^q norm of a scalar or vector field (components summed)."""
    if math.isinf(q):
        return float(np.max(np.abs(f))) if f.size else 0.0
    w = quadrature_weights(grid)
    if f.ndim == 3:
        total = sum(float(np.sum(w * np.abs(c) ** q)) for c in f)
    else:
        total = float(np.sum(w * np.abs(f) ** q))
    return total ** (1.0 / q)


def _first_derivatives(f: np.ndarray, grid: Grid) -> list[np.ndarray]:
    comps = f if f.ndim == 3 else f[None]
    out = []
    for c in comps:
        out.append(ddx(c, grid))
        out.append(ddy(c, grid))
    return out


def _second_derivatives(f: np.ndarray, grid: Grid) -> list[np.ndarray]:
    comps = f if f.ndim == 3 else f[None]
    out = []
    for c in comps:
        out.append(dxx(c, grid))
        out.append(dxy(c, grid))
        out.append(dyy(c, grid))
    return out


def sobolev_seminorm(f: np.ndarray, grid: Grid, q: float, order: int) -> float:
    """|f|_{W^{order,q}}: the L^q size of all derivatives of exactly ``order``."""
    if order == 0:
        return lp_norm(f, grid, q)
    derivs = _first_derivatives(f, grid) if order == 1 else _second_derivatives(f, grid)
    if math.isinf(q):
        return max(float(np.max(np.abs(d))) for d in derivs)
    return sum(lp_norm(d, grid, q) ** q for d in derivs) ** (1.0 / q)


def discrete_norm(f: np.ndarray, grid: Grid, spec: NormSpec) -> float:
    """Space norm of one snapshot per ``spec`` (time exponent ignored here)."""
    q = spec.q
    parts = [lp_norm(f, grid, q)]
    if spec.order >= 1:
        parts.append(sobolev_seminorm(f, grid, q, 1))
    if spec.order == 2:
        parts.append(sobolev_seminorm(f, grid, q, 2))
    if math.isinf(q):
        return max(parts)
    return sum(p ** q for p in parts) ** (1.0 / q)


def _snapshot_values(trajectory, spec: NormSpec):
    for snap in trajectory:
        yield getattr(snap, spec.field) if spec.field is not None else snap


def discrete_space_time_norm(trajectory, grid: Grid, spec: NormSpec, dt: float) -> float:
    """Rectangle-rule-in-time aggregation of the per-snapshot space norm.

    SUP_TIME takes the max over all snapshots; LP_TIME applies the rectangle
    rule sampled at the step ends (the backward-Euler time levels), so the
    shared start snapshot of a window never contributes twice.
    """
    snaps = list(_snapshot_values(trajectory, spec))
    if not snaps:
        raise EmptyTrajectory("space-time norm of an empty trajectory")
    vals = [discrete_norm(s, grid, spec) for s in snaps]
    if spec.aggregation == SUP_TIME or math.isinf(spec.p):
        return max(vals)
    tail = vals[1:] if len(vals) > 1 else vals
    return float(sum(v ** spec.p * dt for v in tail) ** (1.0 / spec.p))


# ---------------------------------------------------------------------------
# state snapshots
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class State:
    """One time level of the four unknowns; arrays are read-only snapshots."""

    time: float
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("rho", "u", "theta", "b"):
            arr = np.asarray(getattr(self, name), dtype=float)
            ensure_finite(name, arr)
            arr = arr.copy() if not arr.flags.owndata else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.rho.shape != self.theta.shape or self.u.shape != self.b.shape:
            raise MismatchedSampling("state fields disagree in shape")
        if self.u.shape != (3,) + self.rho.shape:
            raise MismatchedSampling("vector fields must have shape (3, nx, ny)")


def check_same_sampling(a, b) -> None:
    if len(a) != len(b):
        raise MismatchedSampling(f"trajectory lengths differ: {len(a)} vs {len(b)}")
    for sa, sb in zip(a, b):
        if sa.rho.shape != sb.rho.shape:
            raise MismatchedSampling("trajectories live on different grids")
        if abs(sa.time - sb.time) > 1e-12 * max(1.0, abs(sa.time)):
            raise MismatchedSampling("trajectories sample different times")


# ---------------------------------------------------------------------------
# field dumps: one file per field per output time.  Header line
#   # name nx ny hx hy time components
# then, for every component, ny lines (grid lines j = 0 .. ny-1) of nx
# whitespace-separated values formatted with %.17g.
# ---------------------------------------------------------------------------

def write_field_dump(path, name: str, values: np.ndarray, grid: Grid, time: float) -> None:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    comps = arr.shape[0]
    with open(path, "w") as fh:
        fh.write(f"# {name} {grid.nx} {grid.ny} {grid.hx:.17g} {grid.hy:.17g} "
                 f"{time:.17g} {comps}\n")
        for c in range(comps):
            for j in range(grid.ny):
                fh.write(" ".join(f"{v:.17g}" for v in arr[c, :, j]) + "\n")


def read_field_dump(path):
    """Inverse of :func:`write_field_dump`; returns (name, meta, array)."""
    with open(path) as fh:
        header = fh.readline().split()
        name = header[1]
        nx, ny = int(header[2]), int(header[3])
        hx, hy, time = float(header[4]), float(header[5]), float(header[6])
        comps = int(header[7])
        data = np.loadtxt(fh).reshape(comps, ny, nx)
    arr = np.transpose(data, (0, 2, 1))
    meta = {"nx": nx, "ny": ny, "hx": hx, "hy": hy, "time": time, "components": comps}
    return name, meta, (arr[0] if comps == 1 else arr)
