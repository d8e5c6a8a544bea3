"""Picard iteration over a time window, with contraction monitoring in the
lower topology and constructive window shrinking.

One sweep maps an iterate trajectory (rho*, u*, theta*, B*) to the solutions
of the four linearized subproblems, each fed only the input iterate's fields
as frozen data (density from u*, temperature from rho*, u*, B*, induction
from u*, momentum from all four).  Convergence is measured in the lower
topology

    sup_t ||d rho||_L2  +  ||d u||_{L2 H1}  +  ||d theta||_{L2 H1}
                        +  ||d B||_{L2 H1},

the weakest norm in which the map contracts; when two consecutive
contraction ratios reach 1, or an iterate leaves the admissible ball, the
window is halved and the iteration restarts from the window's initial data.
Converged windows are concatenated to reach the requested horizon.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .constitutive import MaterialParams
from .core_fields import (
    Grid,
    State,
    check_same_sampling,
    classify_boundary,
    lp_norm,
    sobolev_seminorm,
)
from .errors import (
    CompatibilityViolated,
    DensityFloorViolated,
    MismatchedSampling,
    NoConvergence,
    OpenMHDError,
)
from .parabolic_solvers import (
    _NORMAL_COMPONENT,
    LinearizedCoefficients,
    solve_induction,
    solve_momentum,
    solve_temperature,
)
from .transport_density import DensityProblem, solve_continuity

log = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
SHRUNK = "SHRUNK"
FAILED = "FAILED"


@dataclass
class BoundaryConditions:
    """Time-dependent traces in boundary-cycle order.

    ``u`` -> (3, nb), ``rho`` -> (nb,), ``theta`` -> (nb,), ``b`` -> (3, nb);
    the induction solve consumes only the tangential part of ``b`` (that is
    the B x n = b1 data), the normal part is closed inside the solver.
    """

    u: object
    theta: object
    b: object
    rho: object | None = None


@dataclass
class Forcings:
    """Optional manufactured right-hand sides, each a callable t -> field."""

    rho: object | None = None
    u: object | None = None
    theta: object | None = None
    b: object | None = None


@dataclass
class SimulationData:
    """Everything one window advance needs besides the ball and tolerances."""

    grid: Grid
    params: MaterialParams
    initial: State
    bc: BoundaryConditions
    grav: object | None = None          # callable t -> (nx, ny) potential
    forcings: Forcings = field(default_factory=Forcings)
    threshold_c: float = 0.5
    lin_tol: float = 1e-10
    central_drift: bool = False
    gauss_seidel: bool = False
    compat_tol: float = 1e-8


@dataclass
class BallSpec:
    """Admissible-set radii in the solution norms plus the density floor.

    Radii left at None are frozen to ``radii_factor`` times the norms of the
    first sweep's output (the constructive version of 'large enough').
    """

    r0: float
    k_rho: float | None = None
    k_u: float | None = None
    k_theta: float | None = None
    k_b: float | None = None
    radii_factor: float = 2.0
    p: float = 4.0
    q: float = 4.0

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("density floor r0 must be positive")


@dataclass
class IterateRecord:
    window_index: int
    iterate: int
    distance: float
    ratio: float | None
    residuals: dict
    ball: dict

    def to_dict(self):
        return {"window_index": self.window_index, "iterate": self.iterate,
                "distance": self.distance, "ratio": self.ratio,
                "residuals": self.residuals, "ball": self.ball}


@dataclass
class FixedPointReport:
    converged: bool = False
    final_time: float = 0.0
    iterate_count: int = 0
    iterates: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    radii: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "converged": self.converged,
            "final_time": self.final_time,
            "iterate_count": self.iterate_count,
            "iterates": [r.to_dict() for r in self.iterates],
            "windows": [{"length": length, "outcome": outcome}
                        for length, outcome in self.windows],
            "radii": self.radii,
        }


# ---------------------------------------------------------------------------
# lower topology
# ---------------------------------------------------------------------------

def _l2h1_time(diffs, grid, dt):
    """L2-in-time of the spatial H1 norm, rectangle rule at the step ends."""
    total = 0.0
    for d in diffs[1:]:
        h1_sq = lp_norm(d, grid, 2.0) ** 2 + sobolev_seminorm(d, grid, 2.0, 1) ** 2
        total += h1_sq * dt
    return math.sqrt(total)


def lower_topology_distance(a, b, grid: Grid, dt: float) -> float:
    """Distance of two trajectories in the contraction topology."""
    check_same_sampling(a, b)
    if not a:
        raise MismatchedSampling("empty trajectories have no distance")
    rho_part = max(lp_norm(sa.rho - sb.rho, grid, 2.0) for sa, sb in zip(a, b))
    u_part = _l2h1_time([sa.u - sb.u for sa, sb in zip(a, b)], grid, dt)
    th_part = _l2h1_time([sa.theta - sb.theta for sa, sb in zip(a, b)], grid, dt)
    b_part = _l2h1_time([sa.b - sb.b for sa, sb in zip(a, b)], grid, dt)
    return rho_part + u_part + th_part + b_part


# ---------------------------------------------------------------------------
# ball membership
# ---------------------------------------------------------------------------

def _solution_norms(traj, grid, dt, p, q):
    """Solution-space norm surrogates of one trajectory."""
    rho_space = max(lp_norm(s.rho, grid, q) ** q
                    + sobolev_seminorm(s.rho, grid, q, 1) ** q
                    for s in traj) ** (1.0 / q)
    rho_dt = max(lp_norm((b.rho - a.rho) / dt, grid, q)
                 for a, b in zip(traj, traj[1:])) if len(traj) > 1 else 0.0

    def parabolic(getter):
        space = sum((lp_norm(getter(s), grid, q) ** q
                     + sobolev_seminorm(getter(s), grid, q, 1) ** q
                     + sobolev_seminorm(getter(s), grid, q, 2) ** q) ** (p / q) * dt
                    for s in traj[1:]) ** (1.0 / p)
        rate = sum(lp_norm((getter(b) - getter(a)) / dt, grid, q) ** p * dt
                   for a, b in zip(traj, traj[1:])) ** (1.0 / p)
        return space + rate

    return {
        "rho": rho_space + rho_dt,
        "u": parabolic(lambda s: s.u),
        "theta": parabolic(lambda s: s.theta),
        "b": parabolic(lambda s: s.b),
    }


def check_ball_membership(traj, ball: BallSpec, grid, dt) -> dict:
    norms = _solution_norms(traj, grid, dt, ball.p, ball.q)
    rho_min = min(float(np.min(s.rho)) for s in traj)
    radii = {"rho": ball.k_rho, "u": ball.k_u, "theta": ball.k_theta,
             "b": ball.k_b}
    out = {"density_floor": bool(rho_min >= ball.r0), "rho_min": rho_min}
    for name, norm in norms.items():
        radius = radii[name]
        out[name] = True if radius is None else bool(norm <= radius)
        out[f"{name}_norm"] = norm
    return out


# ---------------------------------------------------------------------------
# one Picard sweep
# ---------------------------------------------------------------------------

def _sample_bc(fn, times):
    return np.array([np.asarray(fn(t), dtype=float) for t in times])


def picard_step(iterate, data: SimulationData, dt, r0=None,
                return_residuals=False):
    """Apply the fixed-point map once: solve the four linearized problems
    against the input iterate's frozen fields.

    Density first, then temperature, induction and momentum, each marching
    the window; with ``data.gauss_seidel`` the later solves read the freshly
    computed density/temperature/induction output instead (off by default,
    which matches the mapping's plain Jacobi structure).
    """
    grid = data.grid
    nt = len(iterate) - 1
    t0 = iterate[0].time
    times = [t0 + k * dt for k in range(nt + 1)]
    v_traj = [s.u for s in iterate]

    inflow_present = data.bc.rho is not None
    rho_b = _sample_bc(data.bc.rho, times) if inflow_present else None
    f_rho = ([np.asarray(data.forcings.rho(t), dtype=float) for t in times]
             if data.forcings.rho is not None else None)
    problem = DensityProblem(grid=grid, v_traj=v_traj,
                             rho0=np.asarray(iterate[0].rho), dt=dt, t0=t0,
                             rho_b=rho_b, f_traj=f_rho,
                             compat_tol=data.compat_tol)
    rho_traj = solve_continuity(problem)
    if r0 is not None:
        worst = min(float(np.min(r)) for r in rho_traj)
        if worst < r0:
            raise DensityFloorViolated(
                f"density reached {worst:.3g} below the floor {r0:.3g}")

    frozen_rho = rho_traj if data.gauss_seidel else [s.rho for s in iterate]

    residuals = {"temperature": 0.0, "induction": 0.0, "momentum": 0.0}

    theta_traj = [np.asarray(iterate[0].theta)]
    for k in range(nt):
        t_new = times[k + 1]
        coeffs = LinearizedCoefficients(
            grid=grid, params=data.params, rho=np.asarray(frozen_rho[k + 1]),
            v=np.asarray(iterate[k + 1].u), b=np.asarray(iterate[k + 1].b),
            theta=np.asarray(iterate[k + 1].theta),
            grav=_eval_opt(data.grav, t_new))
        forcing = _eval_opt(data.forcings.theta, t_new)
        theta, info = solve_temperature(
            coeffs, theta_traj[k], data.bc.theta(t_new), None, dt,
            central_drift=data.central_drift, forcing=forcing,
            lin_tol=data.lin_tol)
        theta_traj.append(theta)
        residuals["temperature"] = max(residuals["temperature"], info.residual)

    b_traj = [np.asarray(iterate[0].b)]
    for k in range(nt):
        t_new = times[k + 1]
        coeffs = LinearizedCoefficients(
            grid=grid, params=data.params, rho=np.asarray(frozen_rho[k + 1]),
            v=np.asarray(iterate[k + 1].u), b=b_traj[k],
            theta=np.asarray(iterate[k + 1].theta))
        forcing = _eval_opt(data.forcings.b, t_new)
        b, info = solve_induction(coeffs, b_traj[k], data.bc.b(t_new), dt,
                                  forcing=forcing, lin_tol=data.lin_tol)
        b_traj.append(b)
        residuals["induction"] = max(residuals["induction"], info.residual)

    frozen_theta = theta_traj if data.gauss_seidel else [s.theta for s in iterate]
    frozen_b = b_traj if data.gauss_seidel else [s.b for s in iterate]
    u_traj = [np.asarray(iterate[0].u)]
    for k in range(nt):
        t_new = times[k + 1]
        coeffs = LinearizedCoefficients(
            grid=grid, params=data.params, rho=np.asarray(frozen_rho[k + 1]),
            v=np.asarray(iterate[k + 1].u), b=np.asarray(frozen_b[k + 1]),
            theta=np.asarray(frozen_theta[k + 1]),
            grav=_eval_opt(data.grav, t_new))
        forcing = _eval_opt(data.forcings.u, t_new)
        u, info = solve_momentum(coeffs, u_traj[k], data.bc.u(t_new), dt,
                                 central_drift=data.central_drift,
                                 forcing=forcing, lin_tol=data.lin_tol)
        u_traj.append(u)
        residuals["momentum"] = max(residuals["momentum"], info.residual)

    out = [iterate[0]]
    for k in range(1, nt + 1):
        out.append(State(time=times[k], rho=rho_traj[k], u=u_traj[k],
                         theta=theta_traj[k], b=b_traj[k]))
    if return_residuals:
        return out, residuals
    return out


def _eval_opt(fn, t):
    return None if fn is None else np.asarray(fn(t), dtype=float)


# ---------------------------------------------------------------------------
# window orchestration
# ---------------------------------------------------------------------------

def constant_iterate(start: State, nt: int, dt: float):
    """Constant-in-time extension of the window-start data; satisfies the
    ball's initial condition by construction."""
    return [start] + [State(time=start.time + k * dt, rho=start.rho,
                            u=start.u, theta=start.theta, b=start.b)
                      for k in range(1, nt + 1)]


def check_compatibility(data: SimulationData, tol=None):
    """Numeric compatibility of the initial data with the traces at t0."""
    tol = data.compat_tol if tol is None else tol
    grid = data.grid
    t0 = data.initial.time
    bi, bj = grid.bd_i, grid.bd_j
    bad = []

    def gap(a, b):
        return float(np.max(np.abs(a - b)))

    g = gap(data.initial.u[:, bi, bj], np.asarray(data.bc.u(t0)))
    if g > tol:
        bad.append(f"u_0 != u_B(0) on the boundary (gap {g:.3g})")
    g = gap(data.initial.theta[bi, bj], np.asarray(data.bc.theta(t0)))
    if g > tol:
        bad.append(f"theta_0 != theta_B(0) on the boundary (gap {g:.3g})")
    # B x n = b1(0): compare tangential components under each node's side
    trace = np.asarray(data.bc.b(t0))
    b0 = data.initial.b[:, bi, bj]
    for comp in range(3):
        mask = np.array([_NORMAL_COMPONENT[s] != comp for s in grid.bd_side])
        if mask.any():
            g = gap(b0[comp][mask], trace[comp][mask])
            if g > tol:
                bad.append(f"B_0 x n != b_1(0) in component {comp} (gap {g:.3g})")
    if data.bc.rho is not None:
        inflow = np.array([t.value == "inflow" for t in grid.face_tags])
        if inflow.any():
            g = gap(data.initial.rho[bi[inflow], bj[inflow]],
                    np.asarray(data.bc.rho(t0))[inflow])
            if g > tol:
                bad.append(f"rho_0 != rho_B(0) on the inflow boundary (gap {g:.3g})")
    if bad:
        raise CompatibilityViolated(bad)


def run_fixed_point(data: SimulationData, ball: BallSpec, tol: float,
                    max_iter: int, max_shrinks: int, horizon: float,
                    window: float, dt: float, initial_iterate=None):
    """Advance to the horizon through converged Picard windows.

    Within a window: iterate the map from the constant-in-time extension of
    the window-start state (or ``initial_iterate`` on the first attempt)
    until the lower-topology step distance drops below ``tol``.  Windows that
    fail to contract (two consecutive ratios >= 1), leave the ball, exhaust
    ``max_iter`` or raise a subproblem error are halved and restarted, up to
    ``max_shrinks`` times in total.
    """
    report = FixedPointReport()
    ball_current = ball
    check_compatibility(data)

    full_traj = [data.initial]
    t_cur = data.initial.time
    t_end = data.initial.time + horizon
    window_len = min(window, horizon)
    shrinks = 0

    while t_cur < t_end - 0.5 * dt:
        win = min(window_len, t_end - t_cur)
        nt = max(1, int(round(win / dt)))
        win = nt * dt
        start = full_traj[-1]
        grid_w = classify_boundary(
            data.grid, np.asarray(data.bc.u(t_cur)), c=data.threshold_c)
        data_w = SimulationData(
            grid=grid_w, params=data.params, initial=start, bc=data.bc,
            grav=data.grav, forcings=data.forcings,
            threshold_c=data.threshold_c, lin_tol=data.lin_tol,
            central_drift=data.central_drift, gauss_seidel=data.gauss_seidel,
            compat_tol=data.compat_tol)

        use_custom = initial_iterate is not None and not report.windows
        iterate = initial_iterate if use_custom else constant_iterate(start, nt, dt)
        if use_custom:
            if len(iterate) != nt + 1:
                raise MismatchedSampling(
                    "initial iterate does not match the window sampling")
            first = iterate[0]
            if any(float(np.max(np.abs(np.asarray(getattr(first, f))
                                       - np.asarray(getattr(start, f))))) > 0.0
                   for f in ("rho", "u", "theta", "b")):
                raise CompatibilityViolated(
                    ["the starting iterate must carry the window's initial data"])

        outcome, traj, ball_current = _iterate_window(
            iterate, data_w, ball_current, tol, max_iter, dt, report, win)
        report.radii = {"rho": ball_current.k_rho, "u": ball_current.k_u,
                        "theta": ball_current.k_theta, "b": ball_current.k_b}
        if outcome == CONVERGED:
            report.windows.append((win, CONVERGED))
            full_traj.extend(traj[1:])
            t_cur = full_traj[-1].time
        else:
            report.windows.append((win, SHRUNK))
            shrinks += 1
            window_len = win / 2.0
            if shrinks > max_shrinks or window_len < dt - 1e-12:
                report.windows.append((window_len, FAILED))
                report.converged = False
                report.final_time = t_cur
                exc = NoConvergence(
                    f"window shrunk {shrinks} times without contraction "
                    f"(last length {win:g})")
                exc.report = report
                raise exc

    report.converged = True
    report.final_time = t_cur
    return full_traj, report


def _freeze_radii(ball: BallSpec, traj, grid, dt) -> BallSpec:
    norms = _solution_norms(traj, grid, dt, ball.p, ball.q)
    f = ball.radii_factor
    return BallSpec(r0=ball.r0, k_rho=f * norms["rho"], k_u=f * norms["u"],
                    k_theta=f * norms["theta"], k_b=f * norms["b"],
                    radii_factor=f, p=ball.p, q=ball.q)


def _iterate_window(iterate, data, ball, tol, max_iter, dt, report, win_len):
    grid = data.grid
    window_index = len(report.windows)
    prev_distance = None
    bad_ratios = 0
    for it in range(1, max_iter + 1):
        try:
            new, residuals = picard_step(iterate, data, dt, r0=ball.r0,
                                         return_residuals=True)
        except (OpenMHDError, FloatingPointError) as exc:
            log.info("window %d sweep %d failed (%s); shrinking",
                     window_index, it, exc)
            return SHRUNK, None, ball
        if ball.k_rho is None:
            # radii default to radii_factor times the first sweep's norms
            ball = _freeze_radii(ball, new, grid, dt)
        distance = lower_topology_distance(new, iterate, grid, dt)
        ratio = None if prev_distance is None or prev_distance == 0.0 \
            else distance / prev_distance
        membership = check_ball_membership(new, ball, grid, dt)
        report.iterates.append(IterateRecord(
            window_index=window_index, iterate=it, distance=distance,
            ratio=ratio, residuals=residuals, ball=membership))
        report.iterate_count += 1

        if not membership["density_floor"]:
            log.info("window %d sweep %d left the density floor; shrinking",
                     window_index, it)
            return SHRUNK, None, ball
        if not all(membership[k] for k in ("rho", "u", "theta", "b")):
            log.info("window %d sweep %d left the ball; shrinking",
                     window_index, it)
            return SHRUNK, None, ball
        if distance <= tol:
            return CONVERGED, new, ball
        if ratio is not None and ratio >= 1.0:
            bad_ratios += 1
            if bad_ratios >= 2:
                log.info("window %d: no contraction for 2 sweeps; shrinking",
                         window_index)
                return SHRUNK, None, ball
        else:
            bad_ratios = 0
        iterate = new
        prev_distance = distance
    log.info("window %d: %d sweeps without convergence; shrinking",
             window_index, max_iter)
    return SHRUNK, None, ball
