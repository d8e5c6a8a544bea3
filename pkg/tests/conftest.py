"""Shared builders for the coupled-solver tests: a small inflow channel with
a magnetic bump, plus the heat-solve manufactured-solution harness used by
both the solver tests and the acceptance suite."""

import numpy as np

from openmhd.constitutive import MaterialParams
from openmhd.core_fields import State, classify_boundary, lp_norm, make_grid
from openmhd.fixed_point import BallSpec, BoundaryConditions, SimulationData
from openmhd.parabolic_solvers import LinearizedCoefficients, solve_temperature


def channel_data(n=17, b_amp=0.2, u_in=1.0, mu=0.05, seed_grid=None):
    """Uniform inflow from the left, warm walls, an out-of-plane magnetic
    bump that decays and stirs the flow through the Lorentz force."""
    grid = seed_grid or make_grid(n, n)
    nb = grid.n_boundary

    def u_trace(t):
        out = np.zeros((3, nb))
        out[0] = u_in
        return out

    grid = classify_boundary(grid, u_trace(0.0), c=0.5)
    xb, yb = grid.boundary_coords()

    def rho_trace(t):
        return np.ones(nb)

    def theta_trace(t):
        return np.ones(nb)

    def b_trace(t):
        out = np.zeros((3, nb))
        out[2] = b_amp * np.sin(np.pi * xb) * np.sin(np.pi * yb)
        return out

    bump = b_amp * np.sin(np.pi * grid.xg) * np.sin(np.pi * grid.yg)
    initial = State(
        time=0.0,
        rho=np.ones(grid.shape),
        u=np.stack([np.full(grid.shape, u_in), np.zeros(grid.shape),
                    np.zeros(grid.shape)]),
        theta=np.ones(grid.shape),
        b=np.stack([np.zeros(grid.shape), np.zeros(grid.shape), bump]),
    )
    data = SimulationData(
        grid=grid,
        params=MaterialParams(mu=mu, lam=0.0, kappa=1.0, cv=1.0, xi=1.0),
        initial=initial,
        bc=BoundaryConditions(u=u_trace, theta=theta_trace, b=b_trace,
                              rho=rho_trace),
    )
    return data


def default_ball():
    return BallSpec(r0=0.2)


def heat_mms_march(n, dt, steps, central_drift=True):
    """March the heat solve against theta* = 1 + e^{-t} sin(pi x) sin(pi y)
    with drift v = (1, 0.5, 0); the forcing is the exact residual.  Returns
    the final temperature and the grid."""
    grid = make_grid(n, n)
    trace = np.tile(np.array([1.0, 0.5, 0.0])[:, None], (1, grid.n_boundary))
    grid = classify_boundary(grid, trace, c=0.5)
    coeffs = LinearizedCoefficients(
        grid=grid, params=MaterialParams(),
        rho=np.ones(grid.shape),
        v=np.stack([np.ones(grid.shape), 0.5 * np.ones(grid.shape),
                    np.zeros(grid.shape)]),
        b=np.zeros((3, grid.nx, grid.ny)),
        theta=np.ones(grid.shape),
    )
    sx = np.sin(np.pi * grid.xg); cx = np.cos(np.pi * grid.xg)
    sy = np.sin(np.pi * grid.yg); cy = np.cos(np.pi * grid.yg)
    theta = 1.0 + sx * sy
    theta_b = np.ones(grid.n_boundary)
    for k in range(steps):
        t_new = (k + 1) * dt
        phi = np.exp(-t_new) * sx * sy
        f = (-phi + np.exp(-t_new) * np.pi * (cx * sy + 0.5 * sx * cy)
             + 2.0 * np.pi ** 2 * phi)
        theta, _ = solve_temperature(coeffs, theta, theta_b, None, dt=dt,
                                     central_drift=central_drift, forcing=f,
                                     lin_tol=1e-12)
    return theta, grid


def heat_mms_error(n, dt, steps, central_drift=True):
    """L2 error of the marched heat solve against the exact state."""
    theta, grid = heat_mms_march(n, dt, steps, central_drift)
    exact = 1.0 + np.exp(-steps * dt) * np.sin(np.pi * grid.xg) \
        * np.sin(np.pi * grid.yg)
    return lp_norm(theta - exact, grid, 2.0), grid.hx
