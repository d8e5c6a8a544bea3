"""Pointwise constitutive laws: pressure, viscous stress, dissipation,
Lorentz force, Joule heating and heat flux.

All functions are pure and pointwise (embarrassingly parallel); tensor
fields have shape (3, 3, nx, ny).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_fields import Grid, curl, gradient


@dataclass(frozen=True)
class MaterialParams:
    """Medium constants.  ``d_eff`` is the dimension used in the deviatoric
    split of the stress; vectors carry 3 components even on the 2D grid, so
    it stays 3."""

    mu: float = 1.0        # shear viscosity
    lam: float = 0.0       # bulk viscosity
    kappa: float = 1.0     # heat conductivity
    cv: float = 1.0        # specific heat
    xi: float = 1.0        # magnetic resistivity
    d_eff: int = 3

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("shear viscosity mu must be > 0")
        if self.lam < 0:
            raise ValueError("bulk viscosity lambda must be >= 0")
        if self.kappa <= 0:
            raise ValueError("heat conductivity kappa must be > 0")
        if self.cv <= 0:
            raise ValueError("specific heat cv must be > 0")
        if self.xi <= 0:
            raise ValueError("magnetic resistivity xi must be > 0")
        if self.d_eff != 3:
            raise ValueError("the deviatoric split is fixed to d_eff = 3")


def pressure(rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Ideal-gas pressure p = rho * theta."""
    return rho * theta


def stress(grad_u: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Viscous stress S = mu (2 D - (2/3) div u I) + lam div u I.

    ``grad_u`` is the full gradient tensor; only its symmetric part enters.
    """
    d = 0.5 * (grad_u + np.swapaxes(grad_u, 0, 1))
    div_u = grad_u[0, 0] + grad_u[1, 1] + grad_u[2, 2]
    s = 2.0 * params.mu * d
    iso = (params.lam - 2.0 * params.mu / params.d_eff) * div_u
    for a in range(3):
        s[a, a] = s[a, a] + iso
    return s


def viscous_dissipation(s: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Frobenius product S : D, nonnegative whenever S derives from D."""
    return np.einsum("ab...,ab...->...", s, d)


def lorentz_force(b: np.ndarray, grid: Grid) -> np.ndarray:
    """curl B x B evaluated pointwise."""
    return np.cross(curl(b, grid), b, axis=0)


def joule_heating(b: np.ndarray, grid: Grid, params: MaterialParams) -> np.ndarray:
    """xi |curl B|^2, the resistive heating source."""
    c = curl(b, grid)
    return params.xi * np.sum(c * c, axis=0)


def heat_flux(theta: np.ndarray, grid: Grid, params: MaterialParams) -> np.ndarray:
    """Fourier heat flux q = -kappa grad theta."""
    return -params.kappa * gradient(theta, grid)
