import numpy as np
import pytest

from openmhd.constitutive import MaterialParams, joule_heating, lorentz_force, stress, viscous_dissipation
from openmhd.core_fields import (
    curl,
    divergence,
    gradient,
    laplacian,
    lp_norm,
    make_grid,
    sym_grad,
)
from openmhd.manufactured import ManufacturedSolution


def build(n):
    grid = make_grid(n, n)
    return ManufacturedSolution(grid=grid, params=MaterialParams(mu=0.2, lam=0.1))


def residuals(mms, t):
    """Discrete-in-space residuals of the four forced balance laws; the time
    derivatives are analytic, so everything left is the O(h^2) stencil error."""
    grid = mms.grid
    par = mms.params
    eps = 1e-6
    rho, u, theta, b = mms.state_fields(t)
    drho = (mms.rho(t + eps) - mms.rho(t - eps)) / (2 * eps)
    du = (mms.u(t + eps) - mms.u(t - eps)) / (2 * eps)
    dtheta = (mms.theta(t + eps) - mms.theta(t - eps)) / (2 * eps)
    db = (mms.b(t + eps) - mms.b(t - eps)) / (2 * eps)

    div_u = divergence(u, grid)
    grad_rho = gradient(rho, grid)
    r_rho = drho + u[0] * grad_rho[0] + u[1] * grad_rho[1] + rho * div_u \
        - mms.forcing_rho(t)

    lap_u = np.stack([laplacian(u[c], grid) for c in range(3)])
    grad_div = gradient(div_u, grid)
    div_s = par.mu * lap_u + (par.mu / 3.0 + par.lam) * grad_div
    adv = np.stack([u[0] * gradient(u[c], grid)[0] + u[1] * gradient(u[c], grid)[1]
                    for c in range(3)])
    r_u = du + adv - (div_s + lorentz_force(b, grid)) / rho \
        + gradient(theta, grid) + theta * gradient(np.log(rho), grid) \
        - mms.forcing_u(t)

    d = sym_grad(u, grid)
    s = stress(d, par)
    r_theta = dtheta + u[0] * gradient(theta, grid)[0] \
        + u[1] * gradient(theta, grid)[1] \
        - par.kappa * laplacian(theta, grid) / (par.cv * rho) \
        + theta * div_u / par.cv \
        - (viscous_dissipation(s, d) + joule_heating(b, grid, par)) / (par.cv * rho) \
        - mms.forcing_theta(t)

    lap_b = np.stack([laplacian(b[c], grid) for c in range(3)])
    r_b = db - par.xi * lap_b - curl(np.cross(u, b, axis=0), grid) \
        - mms.forcing_b(t)

    return [lp_norm(r_rho, grid, 2.0), lp_norm(r_u, grid, 2.0),
            lp_norm(r_theta, grid, 2.0), lp_norm(r_b, grid, 2.0)]


class TestForcingConsistency:
    def test_residuals_shrink_quadratically(self):
        # the bump is quadratic per axis, so the continuity and heat residuals
        # sit at the time-difference floor already; the momentum and induction
        # residuals carry genuine O(h^2) stencil error (log rho, quartic terms)
        coarse = residuals(build(17), t=0.1)
        fine = residuals(build(33), t=0.1)
        for rc, rf in zip(coarse, fine):
            assert rf <= max(rc / 3.0, 1e-9)

    def test_fields_positive_and_compatible(self):
        mms = build(17)
        rho, u, theta, b = mms.state_fields(0.0)
        assert rho.min() > 0 and theta.min() > 0
        grid = mms.grid
        np.testing.assert_array_equal(rho[grid.bd_i, grid.bd_j],
                                      mms.rho_trace(0.0))
        np.testing.assert_array_equal(u[:, grid.bd_i, grid.bd_j],
                                      mms.u_trace(0.0))
        # the bump vanishes on the boundary exactly
        np.testing.assert_array_equal(mms.b_trace(0.3), 0.0)
        assert mms.u_trace(0.5)[0] == pytest.approx(mms.u_base)

    def test_b_exactly_divergence_free(self):
        mms = build(21)
        grid = mms.grid
        assert np.max(np.abs(divergence(mms.b(0.2), grid))) == 0.0
