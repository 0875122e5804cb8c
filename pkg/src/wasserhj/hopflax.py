"""Hopf-Lax evolution on discrete measures.

``V(t, mu) = inf_nu  G(nu) + s * Lcost_s(mu, nu)`` with ``s = T - t`` and
``Lcost_s(mu, nu) = min_plan sum w L((y - x) / s)``.  Targets are searched
among point clouds carrying the atoms weights of ``mu``; the infimum is
approximated, never certified as attained.

The same machinery minimizes over chains ``mu -> nu_1 -> ... -> nu_K`` with
segment lengths ``s_1, ..., s_K``, which is what the dynamic programming
check and the optimizer scaling audit need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .functionals import CostModel, FunctionalSpec
from .measures import Coupling, DiscreteMeasure
from .ot_core import solve_exact, w2

__all__ = [
    "HopfLaxProblem",
    "HopfLaxSolution",
    "SolverReport",
    "lagrangian_ot_cost",
    "hopflax_value",
    "chain_minimize",
    "dpp_residual",
    "dpp_check",
    "LipschitzAuditReport",
    "lipschitz_audit",
    "time_monotonicity",
    "NormScalingReport",
    "optimizer_norm_scaling",
    "optimizer_norm_constant",
]

MAX_ITER = 500
STEP_TOL = 1e-7
N_STARTS = 5
ARMIJO_C = 1e-4
MAX_HALVINGS = 40
_BIG = 1e15


@dataclass(frozen=True)
class HopfLaxProblem:
    """Terminal cost ``G``, Lagrangian ``L`` and horizon ``T``.

    ``G`` must declare a lower bound.  Its W2-Lipschitz constant is used by
    the audits; it may be left unset for terminal costs that are only
    locally Lipschitz, in which case audits require an explicit constant.
    """

    terminal: FunctionalSpec
    lagrangian: CostModel
    horizon: float
    seed: int = 0
    n_starts: int = N_STARTS

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.terminal.lower_bound is None:
            raise ValueError("terminal functional must declare a lower bound")
        if self.terminal.kind == "entropy":
            raise ValueError("entropy cannot serve as terminal cost on point clouds")
        if self.n_starts < 1:
            raise ValueError("need at least one start")


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    step_norm: float
    restarts: int
    best_start: int
    tolerance: float
    converged: bool
    status: str = "inf approximated"


@dataclass(frozen=True)
class HopfLaxSolution:
    value: float
    optimizer_measure: DiscreteMeasure
    optimizer_plan: Coupling
    solver_report: SolverReport

    @property
    def tolerance(self) -> float:
        return self.solver_report.tolerance


# ---------------------------------------------------------------------------
# transport with Lagrangian ground cost
# ---------------------------------------------------------------------------


def _ground_cost(x: np.ndarray, y: np.ndarray, s: float, L: CostModel) -> np.ndarray:
    z = (y[None, :, :] - x[:, None, :]) / s
    vals = L.lagrangian(z.reshape(-1, x.shape[1]))
    return s * vals.reshape(len(x), len(y))


def _solve_plan(a, x, b, y, s, L):
    cost = _ground_cost(x, y, s, L)
    finite = np.where(np.isfinite(cost), cost, _BIG)
    plan = solve_exact(a, b, finite)
    with np.errstate(invalid="ignore"):
        total = float(np.sum(np.where(plan > 0, plan * cost, 0.0)))
    return total, plan


def lagrangian_ot_cost(mu: DiscreteMeasure, nu: DiscreteMeasure, s: float, L: CostModel) -> tuple[float, Coupling]:
    """``min_plan sum w L((y - x)/s)`` and the optimal plan (as a coupling of positions)."""
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    if not s > 0:
        raise ValueError("s must be positive")
    total, plan = _solve_plan(mu.weights, mu.points, nu.weights, nu.points, s, L)
    return total / s, Coupling.from_matrix(mu, nu, plan)


# ---------------------------------------------------------------------------
# chain minimization
# ---------------------------------------------------------------------------


@dataclass
class _ChainState:
    clouds: list
    value: float
    plans: list


def _evaluate(X0, w, clouds, segs, L, G):
    total = 0.0
    plans = []
    prev = X0
    for Y, s in zip(clouds, segs):
        c, P = _solve_plan(w, prev, w, Y, s, L)
        total += c
        plans.append(P)
        prev = Y
    total += G.evaluate(DiscreteMeasure(clouds[-1], w))
    return total, plans


def _gradient(X0, w, clouds, plans, segs, L, G):
    d = X0.shape[1]
    grads = [np.zeros_like(Y) for Y in clouds]
    prev = X0
    for k, (Y, s, P) in enumerate(zip(clouds, segs, plans)):
        i, j = np.nonzero(P)
        z = (Y[j] - prev[i]) / s
        gl = L.lagrangian_grad(z).reshape(-1, d) * P[i, j][:, None]
        np.add.at(grads[k], j, gl)
        if k > 0:
            np.add.at(grads[k - 1], i, -gl)
        prev = Y
    grads[-1] += G.position_gradient(DiscreteMeasure(clouds[-1], w))
    return grads


def _preconditioner(w, segs, c):
    out = []
    K = len(segs)
    for k in range(K):
        stiff = 2.0 * c / segs[k] + (2.0 * c / segs[k + 1] if k + 1 < K else 1.0)
        out.append((w * stiff)[:, None])
    return out


def _descend(X0, w, init, segs, L, G, c):
    clouds = [np.array(Y, dtype=float) for Y in init]
    val, plans = _evaluate(X0, w, clouds, segs, L, G)
    pre = _preconditioner(w, segs, c)
    step_norm = math.inf
    it = 0
    converged = False
    slope = 0.0
    last_drop = 0.0
    for it in range(1, MAX_ITER + 1):
        grads = _gradient(X0, w, clouds, plans, segs, L, G)
        dirs = [g / p for g, p in zip(grads, pre)]
        slope = sum(float(np.sum(g * dd)) for g, dd in zip(grads, dirs))
        full = math.sqrt(sum(float(np.sum(dd * dd)) for dd in dirs))
        if full < STEP_TOL or slope <= 0:
            step_norm = full
            converged = True
            break
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = [Y - alpha * dd for Y, dd in zip(clouds, dirs)]
            tval, tplans = _evaluate(X0, w, trial, segs, L, G)
            if tval <= val - ARMIJO_C * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        step_norm = alpha * full
        if not accepted:
            # kink of the transport term: no descent along the supergradient
            converged = True
            break
        clouds, val, plans, last_drop = trial, tval, tplans, val - tval
        if step_norm < STEP_TOL:
            converged = True
            break
    # half the predicted decrease of the preconditioned quadratic model
    gap = 0.5 * max(slope, 0.0)
    if not converged:
        gap = max(gap, last_drop)
    return _ChainState(clouds, val, plans), it, step_norm, converged, gap


def chain_minimize(mu: DiscreteMeasure, segments, prob: HopfLaxProblem, warm: list | None = None):
    """Minimize ``sum_k s_k Lcost_{s_k}(nu_{k-1}, nu_k) + G(nu_K)`` over clouds ``nu_1..nu_K``.

    Returns ``(value, clouds, plans, report)``.  Starts are ``mu`` itself,
    the optional ``warm`` chain, and Gaussian perturbations of ``mu`` drawn
    from a generator seeded by ``prob.seed``.
    """
    segs = [float(s) for s in segments]
    if any(not s > 0 for s in segs):
        raise ValueError("segment lengths must be positive")
    X0 = np.array(mu.points, dtype=float)
    w = np.array(mu.weights, dtype=float)
    L, G = prob.lagrangian, prob.terminal
    c, _ = L.coercivity()
    rng = np.random.default_rng(prob.seed)
    spread = max(1.0, float(np.sqrt(np.mean(np.sum((X0 - X0.mean(0)) ** 2, axis=1)))))
    starts = [[X0.copy() for _ in segs]]
    if warm is not None:
        starts.append([np.array(Y, dtype=float) for Y in warm])
    for _ in range(prob.n_starts - 1):
        starts.append([X0 + 0.5 * spread * rng.standard_normal(X0.shape) for _ in segs])
    best = None
    total_it = 0
    for k, init in enumerate(starts):
        state, it, step, conv, gap = _descend(X0, w, init, segs, L, G, c)
        total_it += it
        if best is None or state.value < best[0].value:
            best = (state, k, it, step, conv, gap)
    state, k, it, step, conv, gap = best
    tol = max(gap, 1e-9 * (1.0 + abs(state.value)))
    report = SolverReport(
        iterations=total_it, step_norm=step, restarts=len(starts), best_start=k, tolerance=tol, converged=conv
    )
    return state.value, state.clouds, state.plans, report


def hopflax_value(t: float, mu: DiscreteMeasure, prob: HopfLaxProblem) -> HopfLaxSolution:
    """Approximate ``V(t, mu)``; at ``t = T`` return ``G(mu)`` with the zero plan."""
    T = prob.horizon
    if not 0.0 <= t <= T:
        raise ValueError(f"t={t!r} outside [0, {T!r}]")
    if t == T:
        rep = SolverReport(0, 0.0, 0, 0, 0.0, True, status="exact")
        return HopfLaxSolution(prob.terminal.evaluate(mu), mu, Coupling.identity(mu), rep)
    value, clouds, plans, report = chain_minimize(mu, [T - t], prob)
    nu = DiscreteMeasure(clouds[0], mu.weights)
    plan = Coupling.from_matrix(mu, nu, plans[0])
    return HopfLaxSolution(value, nu, plan, report)


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


def _split(mu: DiscreteMeasure, t: float, s: float, prob: HopfLaxProblem, warm_from: HopfLaxSolution | None = None):
    T = prob.horizon
    warm = None
    if warm_from is not None:
        # straight-line interpolation of the one-segment optimizer
        frac = (s - t) / (T - t)
        P = _plan_matrix(mu, warm_from)
        target = (P @ warm_from.optimizer_measure.points) / mu.weights[:, None]
        mid = mu.points + frac * (target - mu.points)
        warm = [mid, target]
    return chain_minimize(mu, [s - t, T - s], prob, warm=warm)


def _plan_matrix(mu: DiscreteMeasure, sol: HopfLaxSolution) -> np.ndarray:
    # plan as an (n, n) matrix between mu's atoms and the optimizer atoms, index aligned
    n = mu.n
    P = np.zeros((n, n))
    plan = sol.optimizer_plan
    xi = _nearest(mu.points, plan.x)
    yj = _nearest(sol.optimizer_measure.points, plan.y)
    np.add.at(P, (xi, yj), plan.weights)
    return P


def _nearest(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    d2 = np.sum((query[:, None, :] - points[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def dpp_residual(t: float, s: float, mu: DiscreteMeasure, prob: HopfLaxProblem) -> float:
    """``V(t, mu) - inf_gamma [V(s, exp gamma) + (s - t) Lcal(gamma / (s - t))]``.

    The nested infimum equals the joint infimum over two-segment chains,
    which is what gets minimized (warm-started from the one-segment optimizer).
    """
    return dpp_check(t, s, mu, prob)[0]


def dpp_check(t: float, s: float, mu: DiscreteMeasure, prob: HopfLaxProblem) -> tuple[float, float]:
    """Residual together with the combined solver tolerance of both sides."""
    if not 0.0 <= t < s < prob.horizon:
        raise ValueError("need 0 <= t < s < T")
    one = hopflax_value(t, mu, prob)
    two, _, _, rep = _split(mu, t, s, prob, warm_from=one)
    return one.value - two, one.tolerance + rep.tolerance


@dataclass(frozen=True)
class LipschitzAuditReport:
    lipschitz: float
    spatial_gaps: tuple  # (|V(mu) - V(nu)|, allowed) per pair
    monotone_gaps: tuple  # (V(t, mu) - V(t + h, mu), allowed) per pair
    spatial_violations: int
    monotone_violations: int

    @property
    def passed(self) -> bool:
        return self.spatial_violations == 0 and self.monotone_violations == 0


def lipschitz_audit(t: float, prob: HopfLaxProblem, samples, lipschitz: float | None = None, h: float | None = None) -> LipschitzAuditReport:
    """Spatial Lipschitz bound and monotonicity in time on pairs of measures.

    For every pair ``(mu, nu)``: ``|V(t,mu) - V(t,nu)| <= Lip * W2(mu,nu) + 2 tol``
    and ``V(t, mu) <= V(t + h, mu) + tol``.
    """
    T = prob.horizon
    if not t < T:
        raise ValueError("audit needs t < T")
    lip = prob.terminal.lipschitz if lipschitz is None else lipschitz
    if lip is None:
        raise ValueError("terminal functional has no Lipschitz constant; pass one explicitly")
    h = 0.5 * (T - t) if h is None else h
    spatial, mono = [], []
    nsv = nmv = 0
    for mu, nu in samples:
        a = hopflax_value(t, mu, prob)
        b = hopflax_value(t, nu, prob)
        dist = w2(mu, nu).distance
        gap = abs(a.value - b.value)
        allowed = lip * dist + 2.0 * max(a.tolerance, b.tolerance) + 1e-12
        spatial.append((gap, allowed))
        nsv += gap > allowed
        later = hopflax_value(min(T, t + h), mu, prob)
        mgap = a.value - later.value
        mallowed = max(a.tolerance, later.tolerance) + 1e-12
        mono.append((mgap, mallowed))
        nmv += mgap > mallowed
    return LipschitzAuditReport(lip, tuple(spatial), tuple(mono), int(nsv), int(nmv))


def time_monotonicity(mu: DiscreteMeasure, prob: HopfLaxProblem, t_grid) -> tuple[np.ndarray, np.ndarray, bool]:
    """Values and tolerances of ``V(., mu)`` on ``t_grid``; flag says they are non-decreasing."""
    ts = np.sort(np.asarray(t_grid, dtype=float))
    sols = [hopflax_value(float(t), mu, prob) for t in ts]
    vals = np.array([s.value for s in sols])
    tols = np.array([s.tolerance for s in sols])
    slack = np.maximum(tols[:-1], tols[1:]) + 1e-12
    ok = bool(np.all(vals[:-1] <= vals[1:] + slack))
    return vals, tols, ok


def optimizer_norm_constant(prob: HopfLaxProblem, lipschitz: float | None = None) -> float:
    """``K`` with ``||gamma_h|| <= K (h + sqrt(eps h))`` for ``eps``-optimizers of the short-step problem.

    From ``c|g|^2/h - C h <= Lip |g| + eps``.
    """
    lip = prob.terminal.lipschitz if lipschitz is None else lipschitz
    if lip is None:
        raise ValueError("terminal functional has no Lipschitz constant; pass one explicitly")
    c, C = prob.lagrangian.coercivity()
    return max(lip / c + math.sqrt(C / c), 1.0 / math.sqrt(c))


@dataclass(frozen=True)
class NormScalingReport:
    h: tuple
    norms: tuple
    tolerances: tuple
    bounds: tuple
    slope: float
    constant: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def optimizer_norm_scaling(mu: DiscreteMeasure, prob: HopfLaxProblem, t: float, h_list, lipschitz: float | None = None) -> NormScalingReport:
    """Displacement norm of the first-segment optimizer of the split problem on ``[t, t + h]``."""
    hs = [float(h) for h in h_list]
    if len(hs) < 3:
        raise ValueError("need at least three h values")
    if any(b >= a for a, b in zip(hs, hs[1:])) or hs[-1] <= 0:
        raise ValueError("h values must be positive and decreasing")
    T = prob.horizon
    if not t + hs[0] < T:
        raise ValueError("need t + max(h) < T")
    K = optimizer_norm_constant(prob, lipschitz)
    one = hopflax_value(t, mu, prob)
    norms, tols, bounds = [], [], []
    for h in hs:
        _, clouds, plans, rep = _split(mu, t, t + h, prob, warm_from=one)
        P = plans[0]
        d2 = np.sum((clouds[0][None, :, :] - mu.points[:, None, :]) ** 2, axis=2)
        norms.append(math.sqrt(float(np.sum(P * d2))))
        eps = max(rep.tolerance, one.tolerance)
        tols.append(eps)
        bounds.append(K * (h + math.sqrt(eps * h)))
    nz = np.array(norms) > 0
    if nz.sum() >= 2:
        slope = float(np.polyfit(np.log(np.array(hs)[nz]), np.log(np.array(norms)[nz]), 1)[0])
    else:
        slope = math.nan
    viol = sum(n > b for n, b in zip(norms, bounds))
    return NormScalingReport(tuple(hs), tuple(norms), tuple(tols), tuple(bounds), slope, K, int(viol))
