"""Discrete optimal transport and the tangent-plan calculus built on it.

Exact transport uses a Hungarian-type assignment when both clouds have the
same number of equally weighted atoms and the network simplex of POT
otherwise.  The entropic solver is a log-domain Sinkhorn loop with a
decreasing regularization schedule.

Velocity plans are :class:`~wasserhj.measures.Coupling` objects whose second
entry is a tangent vector attached to the base point.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .measures import MERGE_TOL, Coupling, DiscreteMeasure

logger = logging.getLogger(__name__)

__all__ = [
    "OtSolution",
    "OtSolverError",
    "OtConvergenceError",
    "InexactFiberWarning",
    "VectorField",
    "sq_dist_matrix",
    "solve_exact",
    "solve_entropic",
    "w2",
    "transport_cost",
    "barycentric_projection",
    "exp_map",
    "geodesic_interpolate",
    "tangent_scalar_product",
    "tangent_norm",
    "tangent_distance",
    "distance_superdiff_plan",
    "scale_velocity_plan",
]

FIBER_EXACT_MAX = 64
FIBER_ENTROPIC_REG = 1e-3


class OtSolverError(RuntimeError):
    """The transport solver did not return an optimal plan."""


class OtConvergenceError(OtSolverError):
    """Sinkhorn stopped at the iteration cap with marginals still violated."""


class InexactFiberWarning(UserWarning):
    """A fiber coupling was computed with the entropic fallback."""


@dataclass(frozen=True)
class OtSolution:
    distance: float
    plan: Coupling
    method: str
    dual_gap: float = 0.0
    iterations: int = 0
    marginal_error: float = 0.0


@dataclass(frozen=True)
class VectorField:
    """Values of a map at the atoms of a base measure."""

    base: DiscreteMeasure
    values: np.ndarray

    def at(self, x) -> np.ndarray:
        dist, i = cKDTree(self.base.points).query(np.atleast_2d(x), p=np.inf)
        if np.any(dist > 1e-9):
            raise KeyError("point is not an atom of the base measure")
        return self.values[i]


def sq_dist_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# ---------------------------------------------------------------------------
# solvers on a cost matrix
# ---------------------------------------------------------------------------


def _pot():
    # POT probes every tensor backend on import; only numpy is needed here.
    for key in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot

    return ot


def _equal_weights(a: np.ndarray, b: np.ndarray) -> bool:
    return len(a) == len(b) and np.ptp(a) <= 1e-15 and np.ptp(b) <= 1e-15


def solve_exact(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Optimal plan matrix for marginals ``a``, ``b`` and ground cost ``cost``.

    Ties between optimal plans are resolved by the solver's deterministic
    pivoting; callers must only rely on optimality, not on which optimum.
    """
    n, m = cost.shape
    if n == 1 or m == 1:
        return np.outer(a, b)
    if _equal_weights(a, b):
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros((n, m))
        plan[rows, cols] = a[rows]
        return plan
    ot = _pot()
    # the simplex wants the two masses to agree to machine precision
    b = b * (a.sum() / b.sum())
    # a constant shift leaves the optimum unchanged; the simplex misreports
    # infeasibility on some negative cost matrices
    plan, log = ot.emd(a, b, np.ascontiguousarray(cost - cost.min()), numItermax=max(100_000, 50 * n * m), log=True)
    if log.get("result_code", 1) != 1:
        raise OtSolverError(f"network simplex failed: {log.get('warning')}")
    return plan


def solve_entropic(
    a: np.ndarray,
    b: np.ndarray,
    cost: np.ndarray,
    reg: float,
    *,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    raise_on_fail: bool = True,
):
    """Log-domain Sinkhorn with a geometric warm-start schedule on ``reg``.

    Returns ``(plan, dual_gap, iterations, marginal_error)``.  The schedule
    starts at the cost scale and halves until ``reg`` is reached; potentials
    carry over between stages.
    """
    if reg <= 0:
        raise ValueError("entropic regularization must be positive")
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    scale = max(float(np.max(cost) - np.min(cost)), reg)
    stages = []
    r = scale
    while r > reg:
        stages.append(r)
        r *= 0.5
    stages.append(reg)

    it = 0
    err = np.inf
    for k, r in enumerate(stages):
        final = k == len(stages) - 1
        stage_tol = tol if final else max(tol, 1e-3)
        while it < max_iter:
            f = -r * logsumexp((g[None, :] - cost) / r + log_b[None, :], axis=1)
            g = -r * logsumexp((f[:, None] - cost) / r + log_a[:, None], axis=0)
            it += 1
            # after the g-update the column marginals are exact; check rows
            log_p = (f[:, None] + g[None, :] - cost) / r + log_a[:, None] + log_b[None, :]
            err = float(np.abs(np.exp(logsumexp(log_p, axis=1)) - a).sum())
            if err < stage_tol:
                break
        if it >= max_iter:
            break

    plan = np.exp(log_p)
    primal = float(np.sum(plan * cost)) + reg * float(np.sum(plan * (log_p - log_a[:, None] - log_b[None, :]))) - reg * float(plan.sum()) + reg
    dual = float(f @ a + g @ b) - reg * float(plan.sum()) + reg
    gap = max(primal - dual, 0.0)
    if err >= tol:
        msg = f"Sinkhorn did not converge: marginal violation {err:.3e} after {it} iterations (reg={reg})"
        if raise_on_fail:
            raise OtConvergenceError(msg)
        logger.warning(msg)
    return plan, gap, it, err


# ---------------------------------------------------------------------------
# distances and plans between measures
# ---------------------------------------------------------------------------


def _check_dims(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def w2(mu: DiscreteMeasure, nu: DiscreteMeasure, method: str = "exact", reg: float | None = None, **kwargs) -> OtSolution:
    """Quadratic Wasserstein distance together with an optimal plan.

    ``method`` is ``"exact"`` or ``"entropic"``; the latter needs ``reg > 0``
    and reports the primal-dual gap of the regularized problem.  The distance
    returned is always the square root of the transport cost of the plan.
    """
    _check_dims(mu, nu)
    cost = sq_dist_matrix(mu.points, nu.points)
    if method == "exact":
        plan = solve_exact(mu.weights, nu.weights, cost)
        coupling = Coupling.from_matrix(mu, nu, plan)
        return OtSolution(transport_cost(coupling), coupling, "exact")
    if method == "entropic":
        if reg is None or reg <= 0:
            raise ValueError("entropic method requires reg > 0")
        plan, gap, it, err = solve_entropic(mu.weights, nu.weights, cost, reg, **kwargs)
        coupling = Coupling.from_matrix(mu, nu, plan)
        return OtSolution(transport_cost(coupling), coupling, "entropic", gap, it, err)
    raise ValueError(f"unknown method {method!r}")


def transport_cost(plan: Coupling) -> float:
    """``(int |x - y|^2 d plan)^(1/2)``."""
    diff = plan.x - plan.y
    return float(np.sqrt(max(plan.weights @ np.einsum("ij,ij->i", diff, diff), 0.0)))


def barycentric_projection(plan: Coupling) -> VectorField:
    """Fiber means ``x -> int y d plan_x(y)`` at the atoms of the first marginal."""
    fam = plan.fibers()
    vals = np.array([w @ pts for pts, w in fam.fibers])
    return VectorField(fam.base, vals)


def exp_map(velocity: Coupling) -> DiscreteMeasure:
    """Push the velocity plan forward by ``(x, v) -> x + v``."""
    return DiscreteMeasure(velocity.x + velocity.y, velocity.weights).merged(MERGE_TOL)


def geodesic_interpolate(plan: Coupling, t: float) -> DiscreteMeasure:
    """Displacement interpolation ``((1-t) x + t y)#plan``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    pts = (1.0 - t) * plan.x + t * plan.y
    return DiscreteMeasure(pts, plan.weights).merged(MERGE_TOL)


def scale_velocity_plan(lam: float, g: Coupling) -> Coupling:
    """``(x, v) -> (x, lam v)``; coincident pairs are merged (relevant for ``lam = 0``)."""
    return Coupling(g.x, lam * g.y, g.weights).canonical()


def tangent_norm(g: Coupling) -> float:
    """``(int |v|^2 dg)^(1/2)``."""
    return float(np.sqrt(g.weights @ np.einsum("ij,ij->i", g.y, g.y)))


def distance_superdiff_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    """``(x, x - y)#sigma`` for an optimal plan ``sigma`` from ``mu`` to ``nu``."""
    sigma = w2(mu, nu, "exact").plan
    return Coupling(sigma.x, sigma.x - sigma.y, sigma.weights)


# ---------------------------------------------------------------------------
# fiber-wise couplings of two velocity plans over a common base
# ---------------------------------------------------------------------------


def _matched_fibers(g1: Coupling, g2: Coupling):
    f1, f2 = g1.fibers(), g2.fibers()
    b1, b2 = f1.base, f2.base
    if b1.dim != b2.dim or b1.n != b2.n:
        raise ValueError("velocity plans have different first marginals")
    dist, idx = cKDTree(b2.points).query(b1.points, p=np.inf)
    if np.any(dist > MERGE_TOL) or len(set(idx.tolist())) != b1.n:
        raise ValueError("velocity plans have different first marginals")
    if np.any(np.abs(b1.weights - b2.weights[idx]) > 1e-12):
        raise ValueError("velocity plans have different first marginals")
    return f1, [f2.fibers[j] for j in idx]


def _fiber_ot(p, a, q, b, cost_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]):
    """Minimal cost and flag ``exact`` for one pair of fibers."""
    cost = cost_fn(p, q)
    if len(a) == 1 or len(b) == 1:
        return float(a @ cost @ b), True
    if max(len(a), len(b)) <= FIBER_EXACT_MAX:
        plan = solve_exact(a, b, cost)
        return float(np.sum(plan * cost)), True
    plan, *_ = solve_entropic(a, b, cost - cost.min(), FIBER_ENTROPIC_REG * max(np.ptp(cost), 1e-300), raise_on_fail=False)
    return float(np.sum(plan * cost)), False


def _fiberwise(g1: Coupling, g2: Coupling, cost_fn) -> float:
    f1, fibers2 = _matched_fibers(g1, g2)
    total = 0.0
    inexact = 0
    for wx, (p, a), (q, b) in zip(f1.base.weights, f1.fibers, fibers2):
        val, exact = _fiber_ot(p, a, q, b, cost_fn)
        total += wx * val
        inexact += not exact
    if inexact:
        warnings.warn(
            f"{inexact} fiber couplings exceeded {FIBER_EXACT_MAX} atoms and used the entropic fallback",
            InexactFiberWarning,
            stacklevel=3,
        )
    return total


def tangent_scalar_product(g1: Coupling, g2: Coupling) -> float:
    """Largest ``int <v, w> d theta`` over couplings ``theta`` of the two plans fixing the base point."""
    return -_fiberwise(g1, g2, lambda p, q: -(p @ q.T))


def tangent_distance(g1: Coupling, g2: Coupling) -> float:
    """Distance between velocity plans over a common base: fiber-wise W2 averaged over the base."""
    return float(np.sqrt(max(_fiberwise(g1, g2, sq_dist_matrix), 0.0)))
