"""Numerical checks of convexity and divergence estimates on Wasserstein space.

Residuals are signed: a positive value is a violation of the declared
inequality.  Bound reports compare a computed quantity with its upper
bound and pass when ``bound - computed >= -tolerance``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .functionals import FunctionalSpec, UnsupportedFunctionalError, flat_derivative_numeric
from .grid import GridDensity
from .measures import DiscreteMeasure
from .ot_core import barycentric_projection, geodesic_interpolate, w2

Measure = Union[DiscreteMeasure, GridDensity]

__all__ = [
    "ConvexityCheck",
    "ResidualReport",
    "BoundReport",
    "FlatConvexityReport",
    "geodesic_convexity_residual",
    "mixture_convexity_residual",
    "flat_derivative_convexity_check",
    "div_bound",
    "weak_action_bound",
    "DEFAULT_T_GRID",
    "RESIDUAL_TOL",
    "BOUND_SLACK",
]

DEFAULT_T_GRID = tuple(np.linspace(0.0, 1.0, 11))
RESIDUAL_TOL = 1e-6
BOUND_SLACK = 0.05


@dataclass(frozen=True)
class ConvexityCheck:
    functional: FunctionalSpec
    lam: float
    t_grid: tuple = DEFAULT_T_GRID
    tolerance: float = RESIDUAL_TOL
    sense: str | None = None

    def __post_init__(self):
        ts = np.asarray(self.t_grid, dtype=float)
        if ts.ndim != 1 or not (np.any(ts == 0.0) and np.any(ts == 1.0)):
            raise ValueError("t_grid must contain 0 and 1")
        if np.any((ts < 0) | (ts > 1)):
            raise ValueError("t_grid must lie in [0, 1]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        object.__setattr__(self, "t_grid", tuple(float(t) for t in ts))
        if self.sense is None:
            object.__setattr__(self, "sense", self.functional.sense)
        if self.sense not in ("convex", "concave"):
            raise ValueError("sense must be 'convex' or 'concave'")


@dataclass(frozen=True)
class ResidualReport:
    worst: float
    residuals: tuple
    t_grid: tuple
    tolerance: float
    in_scope: bool = True

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


@dataclass(frozen=True)
class BoundReport:
    computed: float
    bound: float
    tolerance: float
    in_scope: bool = True

    @property
    def margin(self) -> float:
        return self.bound - self.computed

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance


def _signed(sense: str, value: float, chord: float, curvature: float) -> float:
    # convex: F_t <= chord - lam/2 t(1-t) W^2 ; concave: F_t >= chord - lam/2 t(1-t) W^2
    rhs = chord - curvature
    return value - rhs if sense == "convex" else rhs - value


def geodesic_convexity_residual(check: ConvexityCheck, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> ResidualReport:
    """Worst signed residual of the declared modulus along the optimal-plan interpolation."""
    if mu0.dim != mu1.dim:
        raise ValueError("dimension mismatch")
    F = check.functional
    sol = w2(mu0, mu1)
    W2sq = sol.distance**2
    F0, F1 = F.evaluate(mu0), F.evaluate(mu1)
    res = []
    for t in check.t_grid:
        Ft = F.evaluate(geodesic_interpolate(sol.plan, t))
        res.append(_signed(check.sense, Ft, (1 - t) * F0 + t * F1, 0.5 * check.lam * t * (1 - t) * W2sq))
    return ResidualReport(max(res), tuple(res), check.t_grid, check.tolerance)


def mixture_convexity_residual(
    F: FunctionalSpec,
    lam: float,
    mu: DiscreteMeasure,
    nu0: DiscreteMeasure,
    nu1: DiscreteMeasure,
    h: float,
    t_grid=DEFAULT_T_GRID,
    tolerance: float = RESIDUAL_TOL,
    sense: str = "convex",
) -> ResidualReport:
    """``h lam``-convexity residual of ``t -> F((1-h) mu + h nu_t)`` with ``nu_t`` the geodesic.

    Runs in ``d = 1`` are allowed but marked out of scope.
    """
    if not 0.0 <= h <= 1.0:
        raise ValueError("h must lie in [0, 1]")
    if not (mu.dim == nu0.dim == nu1.dim):
        raise ValueError("dimension mismatch")
    check = ConvexityCheck(F, lam, tuple(t_grid), tolerance, sense)
    sol = w2(nu0, nu1)
    W2sq = sol.distance**2

    def tau(nu):
        if h == 0.0:
            return mu
        if h == 1.0:
            return nu
        return mu.mixture(nu, h)

    F0, F1 = F.evaluate(tau(nu0)), F.evaluate(tau(nu1))
    res = []
    for t in check.t_grid:
        Ft = F.evaluate(tau(geodesic_interpolate(sol.plan, t)))
        res.append(_signed(check.sense, Ft, (1 - t) * F0 + t * F1, 0.5 * h * lam * t * (1 - t) * W2sq))
    return ResidualReport(max(res), tuple(res), check.t_grid, tolerance, in_scope=mu.dim >= 2)


@dataclass(frozen=True)
class FlatConvexityReport:
    values: tuple  # (D(y0), D(mid), D(y1)) per segment
    excess: tuple  # D(mid) - (D(y0) + D(y1)) / 2 per segment
    violations: int
    tolerance: float
    in_scope: bool

    @property
    def passed(self) -> bool:
        return self.violations == 0


def flat_derivative_convexity_check(
    F: FunctionalSpec, mu: Measure, probe_segments, h: float = 1e-2, tolerance: float = RESIDUAL_TOL
) -> FlatConvexityReport:
    """Midpoint convexity of ``x -> D_mu F(mu, x)`` on segments with endpoints in the support.

    For atomic ``mu`` the midpoint must be an atom as well; otherwise the probe
    is outside the support and ``ValueError`` is raised.
    """
    vals, excess = [], []
    for y0, y1 in probe_segments:
        y0 = np.asarray(y0, dtype=float).reshape(-1)
        y1 = np.asarray(y1, dtype=float).reshape(-1)
        pts = np.stack([y0, 0.5 * (y0 + y1), y1])
        D = flat_derivative_numeric(F, mu, pts, h=h)
        vals.append(tuple(float(v) for v in D))
        excess.append(float(D[1] - 0.5 * (D[0] + D[2])))
    viol = sum(e > tolerance for e in excess)
    return FlatConvexityReport(tuple(vals), tuple(excess), int(viol), tolerance, in_scope=mu.dim >= 2)


# ---------------------------------------------------------------------------
# divergence-type bounds on grids
# ---------------------------------------------------------------------------


def _atoms(m: Measure) -> DiscreteMeasure:
    return m.atomize() if isinstance(m, GridDensity) else m


def _transport_map(rho_atoms: DiscreteMeasure, nu: Measure) -> np.ndarray:
    """Barycentric projection of the optimal plan, evaluated at the atoms of ``rho_atoms``."""
    sol = w2(rho_atoms, _atoms(nu))
    return barycentric_projection(sol.plan).at(rho_atoms.points)


def _grad_log_at_atoms(rho: GridDensity) -> np.ndarray:
    mask = rho.support_mask().ravel()
    gl = rho.grad_log().reshape(rho.dim, -1)
    return gl[:, mask].T


def _slack(bound: float, slack: float) -> float:
    return slack * abs(bound) if bound != 0 else slack


def div_bound(rho: GridDensity, nu: Measure, slack: float = BOUND_SLACK) -> BoundReport:
    """``-int <grad log rho, x - T(x)> d rho`` against the bound ``d``.

    ``T`` is the barycentric projection of the exact plan from the atomized
    grid to ``nu``.
    """
    atoms = rho.atomize()
    T = _transport_map(atoms, nu)
    gl = _grad_log_at_atoms(rho)
    computed = -float(np.sum(atoms.weights * np.einsum("ij,ij->i", gl, atoms.points - T)))
    bound = float(rho.dim)
    return BoundReport(computed, bound, _slack(bound, slack))


def _flat_gradient_on_grid(F: FunctionalSpec, rho: GridDensity) -> np.ndarray:
    """``grad_x D_mu F(rho, x)`` at the support cells, by differencing numeric flat derivatives."""
    nodes = rho.nodes()
    D = flat_derivative_numeric(F, rho, nodes, check_support=False).reshape(rho.shape)
    g = np.gradient(D, *rho.spacing, edge_order=2)
    g = np.stack(g if rho.dim > 1 else [g]).reshape(rho.dim, -1)
    return g[:, rho.support_mask().ravel()].T


def weak_action_bound(F: FunctionalSpec, rho: GridDensity, slack: float = BOUND_SLACK) -> BoundReport:
    """``-int <grad log rho, grad_x D_mu F(rho, x)> d rho`` against ``d * Lambda``.

    ``F`` must declare a concavity modulus ``Lambda``.
    """
    if F.sense != "concave" or F.lambda_geo is None:
        raise ValueError("weak action bound needs a declared concavity modulus")
    if F.kind == "entropy":
        raise UnsupportedFunctionalError("flat derivative of the entropy is not available on grids")
    atoms = rho.atomize()
    grad = F.flat_gradient_at_atoms(atoms)
    if grad is None:
        grad = _flat_gradient_on_grid(F, rho)
    gl = _grad_log_at_atoms(rho)
    computed = -float(np.sum(atoms.weights * np.einsum("ij,ij->i", gl, grad)))
    bound = rho.dim * float(F.lambda_geo)
    return BoundReport(computed, bound, _slack(bound, slack), in_scope=rho.dim >= 2)
