"""Finite-difference solver for the compressible, viscous, heat-conducting,
magnetized fluid system on a rectangle with an inflow boundary.

The time advance is a Picard fixed-point iteration over four linearized
subproblems (semi-Lagrangian continuity, implicit momentum, temperature and
induction solves) with built-in verifiers for the min/max principles, the
density estimates and the contraction behavior.
"""

from .constitutive import MaterialParams
from .core_fields import (
    FaceTag,
    Grid,
    NormSpec,
    Side,
    State,
    classify_boundary,
    discrete_norm,
    discrete_space_time_norm,
    make_grid,
)
from .errors import OpenMHDError
from .fixed_point import (
    BallSpec,
    BoundaryConditions,
    FixedPointReport,
    SimulationData,
    lower_topology_distance,
    picard_step,
    run_fixed_point,
)
from .transport_density import (
    DensityProblem,
    backtrack_characteristic,
    solve_continuity,
)

__all__ = [
    "BallSpec",
    "BoundaryConditions",
    "DensityProblem",
    "FaceTag",
    "FixedPointReport",
    "Grid",
    "MaterialParams",
    "NormSpec",
    "OpenMHDError",
    "Side",
    "SimulationData",
    "State",
    "backtrack_characteristic",
    "classify_boundary",
    "discrete_norm",
    "discrete_space_time_norm",
    "lower_topology_distance",
    "make_grid",
    "picard_step",
    "run_fixed_point",
    "solve_continuity",
]

__version__ = "0.1.0"
