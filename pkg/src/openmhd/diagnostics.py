"""Physics and estimate verifiers run on computed trajectories: min/max
envelopes for the density, the parabolic minimum principle for the
temperature, divergence inheritance for the magnetic field, mass balance
and positivity.

Every check is a pure function of its inputs and never mutates a
trajectory; each returns a :class:`CheckEntry` whose ``passed`` flag holds
iff the stated inequality holds within the given tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_fields import (
    Grid,
    Side,
    divergence,
    quadrature_weights,
    side_trapezoid,
)
from .transport_density import _side_nodes


@dataclass
class CheckEntry:
    name: str
    lhs: float
    rhs: float
    tol: float
    passed: bool
    series: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "tol": self.tol, "passed": self.passed, "series": self.series}


@dataclass
class DiagnosticsReport:
    checks: list = field(default_factory=list)

    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {"passed": self.passed(),
                "checks": [c.to_dict() for c in self.checks]}


def check_density_minmax(rho_traj, lower, upper, tol_h) -> CheckEntry:
    """Streamline envelopes: lower(t)(1 - tol) <= rho <= upper(t)(1 + tol)
    at every node and time."""
    worst = -math.inf
    mins, maxs = [], []
    for k, rho in enumerate(rho_traj):
        lo = float(np.min(rho)); hi = float(np.max(rho))
        mins.append(lo); maxs.append(hi)
        worst = max(worst,
                    lower[k] * (1.0 - tol_h) - lo,
                    hi - upper[k] * (1.0 + tol_h))
    return CheckEntry(
        name="density_minmax", lhs=worst, rhs=0.0, tol=tol_h,
        passed=bool(worst <= 0.0),
        series={"rho_min": mins, "rho_max": maxs,
                "lower": list(map(float, lower)),
                "upper": list(map(float, upper))})


def check_temperature_minimum(theta_traj, div_u_sup, cv, dt, tol_h) -> CheckEntry:
    """Parabolic minimum principle: theta(t) stays above the exponentially
    weighted infimum of the initial and boundary data.

    The boundary infimum is read off the trajectory itself (the solves carry
    the Dirichlet traces exactly); the div-u weight uses the rectangle rule.
    """
    integral = np.concatenate([[0.0],
                               np.cumsum(np.asarray(div_u_sup[:-1])) * dt])
    theta0_min = float(np.min(theta_traj[0]))
    worst = -math.inf
    bounds, mins = [], []
    running = theta0_min  # min over the weighted initial/boundary infima
    for k, theta in enumerate(theta_traj):
        bdry_min = float(min(theta[0, :].min(), theta[-1, :].min(),
                             theta[:, 0].min(), theta[:, -1].min()))
        running = min(running, bdry_min * math.exp(integral[k] / cv))
        bound = running * math.exp(-integral[k] / cv)
        cur = float(np.min(theta))
        bounds.append(bound); mins.append(cur)
        worst = max(worst, bound - tol_h - cur)
    return CheckEntry(
        name="temperature_minimum", lhs=worst, rhs=0.0, tol=tol_h,
        passed=bool(worst <= 0.0),
        series={"theta_min": mins, "bound": bounds})


def check_divergence_b(b_traj, grid: Grid, tol) -> CheckEntry:
    """max_t max_x |div B| never exceeds its initial value plus tol."""
    divs = [float(np.max(np.abs(divergence(b, grid)))) for b in b_traj]
    lhs = max(divs)
    rhs = divs[0] + tol
    return CheckEntry(name="divergence_b", lhs=lhs, rhs=rhs, tol=tol,
                      passed=bool(lhs <= rhs), series={"max_div_b": divs})


def check_mass_balance(rho_traj, u_traj, grid: Grid, dt, tol,
                       f_traj=None) -> CheckEntry:
    """Discrete Reynolds transport: per step,
    |d(int rho) + dt * bdry_int(rho u . n) - dt * int f| <= tol * dt.

    The boundary flux integrates edge-wise (each edge uses its own outward
    normal; trajectory boundary values already carry rho_B on the inflow)."""
    w = quadrature_weights(grid)
    side_cycles = {sd: _side_nodes(grid, sd) for sd in Side}
    residuals = []
    worst = 0.0
    for k in range(len(rho_traj) - 1):
        mass_prev = float(np.sum(w * rho_traj[k]))
        mass_next = float(np.sum(w * rho_traj[k + 1]))
        flux = 0.0
        for sd in Side:
            ii, jj = grid.side_slice(sd)
            rho_edge = rho_traj[k + 1][ii, jj]
            u_edge = u_traj[k + 1][:, ii, jj]
            normal = {Side.LEFT: (-1.0, 0), Side.RIGHT: (1.0, 0),
                      Side.BOTTOM: (-1.0, 1), Side.TOP: (1.0, 1)}[sd]
            un = normal[0] * u_edge[normal[1]]
            flux += side_trapezoid(grid, sd, rho_edge * un)
        body = 0.0
        if f_traj is not None:
            body = float(np.sum(w * f_traj[k + 1]))
        res = (mass_next - mass_prev) + dt * flux - dt * body
        residuals.append(res)
        worst = max(worst, abs(res) / dt)
    return CheckEntry(name="mass_balance", lhs=worst, rhs=tol, tol=tol,
                      passed=bool(worst <= tol),
                      series={"residual_per_dt": [r / dt for r in residuals]})


def positivity_scan(rho_traj, theta_traj) -> CheckEntry:
    """Density and temperature stay strictly positive along the trajectory."""
    rho_min = min(float(np.min(r)) for r in rho_traj)
    theta_min = min(float(np.min(t)) for t in theta_traj)
    lhs = min(rho_min, theta_min)
    return CheckEntry(name="positivity", lhs=lhs, rhs=0.0, tol=0.0,
                      passed=bool(lhs > 0.0),
                      series={"rho_min": rho_min, "theta_min": theta_min})


def div_u_sup_trajectory(u_traj, grid: Grid):
    return [float(np.max(np.abs(divergence(u, grid)))) for u in u_traj]
