"""Implicit backward-Euler solvers for the three linearized parabolic
subproblems (momentum, temperature, magnetic induction) plus the shared
sparse linear solver.

All three solves advance one dt with frozen coefficient fields.  Unknowns
live on the full lattice; Dirichlet rows are substituted at boundary nodes,
so returned fields carry the prescribed traces exactly.  The drift terms are
first-order upwind by default (monotone, so the discrete maximum principle
holds for the source-free heat step); central drift is available behind a
flag for convergence studies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams, joule_heating, lorentz_force, stress, viscous_dissipation
from .core_fields import Grid, Side, curl, divergence, ensure_finite, gradient, sym_grad
from .errors import LinearSolveDiverged, NonPositiveDensityCoefficient

log = logging.getLogger(__name__)


@dataclass
class LinearizedCoefficients:
    """Frozen fields entering one implicit step.

    ``rho`` supplies the 1/rho coefficient and must stay positive; ``v`` is
    the drift velocity; ``b`` and ``theta`` feed the coupling right-hand
    sides; ``grav`` is the external potential (None for no gravity).
    """

    grid: Grid
    params: MaterialParams
    rho: np.ndarray
    v: np.ndarray
    b: np.ndarray
    theta: np.ndarray
    grav: np.ndarray | None = None

    def __post_init__(self):
        if float(np.min(self.rho)) <= 0.0:
            raise NonPositiveDensityCoefficient(
                f"frozen density reaches {float(np.min(self.rho)):.3g}")


@dataclass
class SparseSystem:
    """Assembled CSR system with the unknown layout (component -> slice)."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: dict


@dataclass
class SolveInfo:
    residual: float
    iterations: int
    fallback_used: bool = False


# ---------------------------------------------------------------------------
# assembly helpers (interior rows only; boundary rows are substituted later)
# ---------------------------------------------------------------------------

class _Coo:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        self.rows.append(np.asarray(rows, dtype=np.int64))
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))

    def build(self, n) -> sp.csr_matrix:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _interior(grid: Grid):
    ii, jj = np.meshgrid(np.arange(1, grid.nx - 1), np.arange(1, grid.ny - 1),
                         indexing="ij")
    return ii.ravel(), jj.ravel()


def _flat(i, j, ny):
    return i * ny + j


def _add_diag(coo, grid, ii, jj, vals, off=0):
    rows = _flat(ii, jj, grid.ny) + off
    coo.add(rows, rows, vals)


def _add_laplacian(coo, grid, ii, jj, coeff, row_off=0, col_off=0):
    """coeff * (Dxx + Dyy) with per-node coefficient array at interior nodes."""
    rows = _flat(ii, jj, grid.ny) + row_off
    cx = coeff / grid.hx ** 2
    cy = coeff / grid.hy ** 2
    coo.add(rows, rows, -2.0 * (cx + cy))
    coo.add(rows, _flat(ii + 1, jj, grid.ny) + col_off, cx)
    coo.add(rows, _flat(ii - 1, jj, grid.ny) + col_off, cx)
    coo.add(rows, _flat(ii, jj + 1, grid.ny) + col_off, cy)
    coo.add(rows, _flat(ii, jj - 1, grid.ny) + col_off, cy)


def _add_dxx(coo, grid, ii, jj, coeff, row_off=0, col_off=0):
    rows = _flat(ii, jj, grid.ny) + row_off
    c = coeff / grid.hx ** 2
    coo.add(rows, rows, -2.0 * c)
    coo.add(rows, _flat(ii + 1, jj, grid.ny) + col_off, c)
    coo.add(rows, _flat(ii - 1, jj, grid.ny) + col_off, c)


def _add_dyy(coo, grid, ii, jj, coeff, row_off=0, col_off=0):
    rows = _flat(ii, jj, grid.ny) + row_off
    c = coeff / grid.hy ** 2
    coo.add(rows, rows, -2.0 * c)
    coo.add(rows, _flat(ii, jj + 1, grid.ny) + col_off, c)
    coo.add(rows, _flat(ii, jj - 1, grid.ny) + col_off, c)


def _add_dxy(coo, grid, ii, jj, coeff, row_off=0, col_off=0):
    rows = _flat(ii, jj, grid.ny) + row_off
    c = coeff / (4.0 * grid.hx * grid.hy)
    coo.add(rows, _flat(ii + 1, jj + 1, grid.ny) + col_off, c)
    coo.add(rows, _flat(ii - 1, jj - 1, grid.ny) + col_off, c)
    coo.add(rows, _flat(ii + 1, jj - 1, grid.ny) + col_off, -c)
    coo.add(rows, _flat(ii - 1, jj + 1, grid.ny) + col_off, -c)


def _add_drift(coo, grid, ii, jj, vx, vy, central, row_off=0, col_off=0):
    """v . grad discretized implicitly (upwind by default)."""
    rows = _flat(ii, jj, grid.ny) + row_off
    if central:
        cx = vx / (2.0 * grid.hx)
        cy = vy / (2.0 * grid.hy)
        coo.add(rows, _flat(ii + 1, jj, grid.ny) + col_off, cx)
        coo.add(rows, _flat(ii - 1, jj, grid.ny) + col_off, -cx)
        coo.add(rows, _flat(ii, jj + 1, grid.ny) + col_off, cy)
        coo.add(rows, _flat(ii, jj - 1, grid.ny) + col_off, -cy)
        return
    coo.add(rows, rows, np.abs(vx) / grid.hx + np.abs(vy) / grid.hy)
    up_x = np.where(vx >= 0, ii - 1, ii + 1)
    coo.add(rows, _flat(up_x, jj, grid.ny) + col_off, -np.abs(vx) / grid.hx)
    up_y = np.where(vy >= 0, jj - 1, jj + 1)
    coo.add(rows, _flat(ii, up_y, grid.ny) + col_off, -np.abs(vy) / grid.hy)


def _dirichlet_rows(coo, rhs, grid, values, off=0):
    """Identity rows at every boundary node with the trace as right side."""
    rows = _flat(grid.bd_i, grid.bd_j, grid.ny) + off
    coo.add(rows, rows, np.ones(rows.size))
    rhs[rows] = values


def _normal_derivative_rows(coo, rhs, grid, off=0):
    """Second-order one-sided homogeneous normal-derivative closure rows,
    using each boundary node's assigned side."""
    for k in range(grid.n_boundary):
        i, j = int(grid.bd_i[k]), int(grid.bd_j[k])
        side = grid.bd_side[k]
        row = _flat(i, j, grid.ny) + off
        if side is Side.LEFT:
            cols = [_flat(i, j, grid.ny), _flat(i + 1, j, grid.ny), _flat(i + 2, j, grid.ny)]
            h = grid.hx
        elif side is Side.RIGHT:
            cols = [_flat(i, j, grid.ny), _flat(i - 1, j, grid.ny), _flat(i - 2, j, grid.ny)]
            h = grid.hx
        elif side is Side.BOTTOM:
            cols = [_flat(i, j, grid.ny), _flat(i, j + 1, grid.ny), _flat(i, j + 2, grid.ny)]
            h = grid.hy
        else:
            cols = [_flat(i, j, grid.ny), _flat(i, j - 1, grid.ny), _flat(i, j - 2, grid.ny)]
            h = grid.hy
        coeffs = np.array([3.0, -4.0, 1.0]) / (2.0 * h)
        coo.add([row] * 3, [c + off for c in cols], coeffs)
        rhs[row] = 0.0


_NORMAL_COMPONENT = {Side.LEFT: 0, Side.RIGHT: 0, Side.BOTTOM: 1, Side.TOP: 1}


# ---------------------------------------------------------------------------
# the three subproblem solves
# ---------------------------------------------------------------------------

def assemble_momentum_system(coeffs: LinearizedCoefficients, u_prev, u_bdry, dt,
                             central_drift=False, forcing=None) -> SparseSystem:
    """Backward-Euler step of the linearized momentum balance.

    Interior rows: u/dt + v.grad u - (1/rho) div S(u); the viscous operator
    is written out as mu Lap u_a + (mu/3 + lam) d_a(div u), which couples the
    in-plane components through the mixed derivative.  The right-hand side
    carries the frozen Lorentz force, the temperature and log-density
    gradients and the external potential.
    """
    grid, par = coeffs.grid, coeffs.params
    n = grid.nx * grid.ny
    ii, jj = _interior(grid)
    inv_rho = (1.0 / coeffs.rho)[ii, jj]
    vx = coeffs.v[0][ii, jj]
    vy = coeffs.v[1][ii, jj]

    coo = _Coo()
    mixed = par.mu / 3.0 + par.lam
    for comp in range(3):
        off = comp * n
        _add_diag(coo, grid, ii, jj, np.full(ii.size, 1.0 / dt), off)
        _add_drift(coo, grid, ii, jj, vx, vy, central_drift, off, off)
        if comp == 0:
            _add_dxx(coo, grid, ii, jj, -inv_rho * (4.0 * par.mu / 3.0 + par.lam), off, off)
            _add_dyy(coo, grid, ii, jj, -inv_rho * par.mu, off, off)
            _add_dxy(coo, grid, ii, jj, -inv_rho * mixed, off, 1 * n)
        elif comp == 1:
            _add_dxx(coo, grid, ii, jj, -inv_rho * par.mu, off, off)
            _add_dyy(coo, grid, ii, jj, -inv_rho * (4.0 * par.mu / 3.0 + par.lam), off, off)
            _add_dxy(coo, grid, ii, jj, -inv_rho * mixed, off, 0)
        else:
            _add_laplacian(coo, grid, ii, jj, -inv_rho * par.mu, off, off)

    grad_theta = gradient(coeffs.theta, grid)
    grad_logrho = gradient(np.log(coeffs.rho), grid)
    lorentz = lorentz_force(coeffs.b, grid) / coeffs.rho
    rhs_field = u_prev / dt + lorentz - grad_theta - coeffs.theta * grad_logrho
    if coeffs.grav is not None:
        rhs_field = rhs_field + gradient(coeffs.grav, grid)
    if forcing is not None:
        rhs_field = rhs_field + forcing

    rhs = rhs_field.reshape(3, -1).ravel()
    for comp in range(3):
        _dirichlet_rows(coo, rhs, grid, u_bdry[comp], off=comp * n)

    layout = {"u_x": slice(0, n), "u_y": slice(n, 2 * n), "u_z": slice(2 * n, 3 * n)}
    return SparseSystem(matrix=coo.build(3 * n), rhs=rhs, layout=layout)


def solve_momentum(coeffs, u_prev, u_bdry, dt, *, central_drift=False,
                   forcing=None, lin_tol=1e-10, max_iter=2000):
    system = assemble_momentum_system(coeffs, u_prev, u_bdry, dt,
                                      central_drift, forcing)
    x, info = solve_sparse(system, lin_tol, max_iter, x0=u_prev.ravel())
    grid = coeffs.grid
    u = x.reshape(3, grid.nx, grid.ny)
    u[:, grid.bd_i, grid.bd_j] = u_bdry  # traces hold to machine precision
    return ensure_finite("velocity", u), info


def assemble_temperature_system(coeffs: LinearizedCoefficients, theta_prev,
                                theta_bdry, dt, u_field=None,
                                central_drift=False, forcing=None) -> SparseSystem:
    """Backward-Euler step of the linearized heat balance.

    The reaction term (div v / cv) theta is folded into the diagonal; the
    dissipation S(v):D(v) and the Joule source are frozen on the right side.
    """
    grid, par = coeffs.grid, coeffs.params
    n = grid.nx * grid.ny
    ii, jj = _interior(grid)
    v = coeffs.v if u_field is None else u_field

    coo = _Coo()
    diff = (par.kappa / (par.cv * coeffs.rho))[ii, jj]
    div_v = divergence(v, grid)
    _add_diag(coo, grid, ii, jj, 1.0 / dt + div_v[ii, jj] / par.cv)
    _add_drift(coo, grid, ii, jj, coeffs.v[0][ii, jj], coeffs.v[1][ii, jj],
               central_drift)
    _add_laplacian(coo, grid, ii, jj, -diff)

    d = sym_grad(v, grid)
    s = stress(d, par)
    source = (viscous_dissipation(s, d) + joule_heating(coeffs.b, grid, par)) \
        / (par.cv * coeffs.rho)
    rhs_field = theta_prev / dt + source
    if forcing is not None:
        rhs_field = rhs_field + forcing
    rhs = rhs_field.ravel()
    _dirichlet_rows(coo, rhs, grid, theta_bdry)
    return SparseSystem(matrix=coo.build(n), rhs=rhs, layout={"theta": slice(0, n)})


def solve_temperature(coeffs, theta_prev, theta_bdry, u_field, dt, *,
                      central_drift=False, forcing=None, lin_tol=1e-10,
                      max_iter=2000):
    system = assemble_temperature_system(coeffs, theta_prev, theta_bdry, dt,
                                         u_field, central_drift, forcing)
    x, info = solve_sparse(system, lin_tol, max_iter, x0=theta_prev.ravel())
    grid = coeffs.grid
    theta = x.reshape(grid.shape)
    theta[grid.bd_i, grid.bd_j] = theta_bdry
    return ensure_finite("temperature", theta), info


def assemble_induction_system(coeffs: LinearizedCoefficients, b_prev, b_bdry,
                              dt, component, forcing=None) -> SparseSystem:
    """Backward-Euler step of one component of the unconstrained induction
    equation dB/dt - xi Lap B = curl(v x B), with the coupling explicit in
    the previous magnetic field.

    Boundary rows: the component is substituted from the prescribed trace
    wherever it is tangential to the node's assigned side (that is the
    B x n = b1 data); the normal component is closed with a homogeneous
    one-sided normal-derivative row.
    """
    grid, par = coeffs.grid, coeffs.params
    n = grid.nx * grid.ny
    ii, jj = _interior(grid)

    coo = _Coo()
    _add_diag(coo, grid, ii, jj, np.full(ii.size, 1.0 / dt))
    _add_laplacian(coo, grid, ii, jj, np.full(ii.size, -par.xi))

    coupling = curl(np.cross(coeffs.v, b_prev, axis=0), grid)
    rhs_field = b_prev[component] / dt + coupling[component]
    if forcing is not None:
        rhs_field = rhs_field + forcing[component]
    rhs = rhs_field.ravel()

    # split boundary nodes into Dirichlet (tangential) and closure (normal)
    dir_mask = np.array([_NORMAL_COMPONENT[s] != component for s in grid.bd_side])
    rows = _flat(grid.bd_i[dir_mask], grid.bd_j[dir_mask], grid.ny)
    coo.add(rows, rows, np.ones(rows.size))
    rhs[rows] = b_bdry[component][dir_mask]
    for k in np.flatnonzero(~dir_mask):
        i, j = int(grid.bd_i[k]), int(grid.bd_j[k])
        side = grid.bd_side[k]
        row = _flat(i, j, grid.ny)
        if side is Side.LEFT:
            cols = [row, _flat(i + 1, j, grid.ny), _flat(i + 2, j, grid.ny)]
            h = grid.hx
        elif side is Side.RIGHT:
            cols = [row, _flat(i - 1, j, grid.ny), _flat(i - 2, j, grid.ny)]
            h = grid.hx
        elif side is Side.BOTTOM:
            cols = [row, _flat(i, j + 1, grid.ny), _flat(i, j + 2, grid.ny)]
            h = grid.hy
        else:
            cols = [row, _flat(i, j - 1, grid.ny), _flat(i, j - 2, grid.ny)]
            h = grid.hy
        coo.add([row] * 3, cols, np.array([3.0, -4.0, 1.0]) / (2.0 * h))
        rhs[row] = 0.0

    return SparseSystem(matrix=coo.build(n), rhs=rhs,
                        layout={f"b_{'xyz'[component]}": slice(0, n)})


def solve_induction(coeffs, b_prev, b_bdry, dt, *, forcing=None,
                    lin_tol=1e-10, max_iter=2000, div_warn_tol=None):
    if div_warn_tol is not None:
        d0 = float(np.max(np.abs(divergence(b_prev, coeffs.grid))))
        if d0 > div_warn_tol:
            log.warning("induction step: |div B_prev| = %.3g exceeds %.3g",
                        d0, div_warn_tol)
    grid = coeffs.grid
    comps = []
    worst = SolveInfo(residual=0.0, iterations=0)
    for c in range(3):
        system = assemble_induction_system(coeffs, b_prev, b_bdry, dt, c, forcing)
        x, info = solve_sparse(system, lin_tol, max_iter, x0=b_prev[c].ravel())
        comp = x.reshape(grid.shape)
        tangential = np.array([_NORMAL_COMPONENT[s] != c for s in grid.bd_side])
        bi = grid.bd_i[tangential]
        bj = grid.bd_j[tangential]
        comp[bi, bj] = b_bdry[c][tangential]
        comps.append(comp)
        if info.residual > worst.residual:
            worst = info
    return ensure_finite("magnetic field", np.stack(comps)), worst


# ---------------------------------------------------------------------------
# sparse linear solver: BiCGStab with Jacobi preconditioning, ILU fallback
# ---------------------------------------------------------------------------

def solve_sparse(system: SparseSystem, tol: float, max_iter: int, x0=None):
    """Solve to relative residual ||Ax - b|| / ||b|| <= tol.

    Jacobi-preconditioned BiCGStab first; on stagnation the solve restarts
    with an ILU preconditioner.  Raises :class:`LinearSolveDiverged` when
    both attempts miss the tolerance.
    """
    a = system.matrix
    b = system.rhs
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(residual=0.0, iterations=0)

    diag = a.diagonal()
    jacobi = None
    if np.all(np.abs(diag) > 0):
        inv = 1.0 / diag
        jacobi = spla.LinearOperator(a.shape, matvec=lambda x: inv * x)

    counter = {"n": 0}

    def cb(_):
        counter["n"] += 1

    x = None
    if jacobi is not None:
        x, info = spla.bicgstab(a, b, x0=x0, rtol=tol, atol=0.0,
                                maxiter=max_iter, M=jacobi, callback=cb)
        res = float(np.linalg.norm(b - a @ x)) / bnorm
        if info == 0 and res <= tol:
            return x, SolveInfo(residual=res, iterations=counter["n"])

    # fallback: tighter preconditioner
    try:
        ilu = spla.spilu(a.tocsc(), drop_tol=1e-10, fill_factor=30.0)
    except RuntimeError as exc:
        raise LinearSolveDiverged(f"ILU factorization failed: {exc}") from exc
    prec = spla.LinearOperator(a.shape, matvec=ilu.solve)
    x, info = spla.bicgstab(a, b, x0=x0, rtol=tol, atol=0.0,
                            maxiter=max_iter, M=prec, callback=cb)
    res = float(np.linalg.norm(b - a @ x)) / bnorm
    if info == 0 and res <= tol and np.isfinite(res):
        return x, SolveInfo(residual=res, iterations=counter["n"], fallback_used=True)
    raise LinearSolveDiverged(
        f"relative residual {res:.3g} after {counter['n']} iterations (target {tol:g})")
