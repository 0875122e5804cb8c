"""Optimal transport, Hopf-Lax evolution and viscosity experiments on measures."""

from __future__ import annotations

__version__ = "0.1.0"

from .convexity import (
    BoundReport,
    ConvexityCheck,
    div_bound,
    flat_derivative_convexity_check,
    geodesic_convexity_residual,
    mixture_convexity_residual,
    weak_action_bound,
)
from .functionals import (
    CostModel,
    FunctionalSpec,
    entropy,
    entropy_star,
    fenchel_gap,
    fisher_information,
    flat_derivative_numeric,
    relaxed_hamiltonian,
    relaxed_lagrangian,
    second_moment,
)
from .grid import GridDensity, read_grid, write_grid
from .hopflax import (
    HopfLaxProblem,
    HopfLaxSolution,
    dpp_residual,
    hopflax_value,
    lagrangian_ot_cost,
    lipschitz_audit,
    optimizer_norm_scaling,
)
from .measures import Coupling, DiscreteMeasure, read_coupling, read_measure, write_coupling, write_measure
from .ot_core import (
    barycentric_projection,
    distance_superdiff_plan,
    exp_map,
    geodesic_interpolate,
    scale_velocity_plan,
    tangent_distance,
    tangent_norm,
    tangent_scalar_product,
    w2,
)
from .viscosity import (
    Hamiltonian1d,
    HjProblem1d,
    RateReport,
    one_sided_semiconcave_rate,
    rate_experiment,
    solve_hj_first_order,
    solve_hj_viscous,
)
