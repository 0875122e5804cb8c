"""Vanishing-viscosity experiments for one-particle Hamilton-Jacobi equations.

Terminal-value problems on an interval,

    -u_t + H(u_x) = 0             (first order)
    -u_t + H(u_x) - eps u_xx = 0  (viscous)

with ``u(T, .) = g``, are solved backward in time (``tau = T - t``) with an
explicit monotone Lax-Friedrichs step for ``H`` and an implicit
tridiagonal step for the diffusion.  The computational domain is padded so
that the reporting window never feels the artificial boundary.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded


__all__ = [
    "Hamiltonian1d",
    "Terminal1d",
    "terminal",
    "TERMINALS",
    "HjProblem1d",
    "HjSolution",
    "RateReport",
    "solve_hj_first_order",
    "solve_hj_viscous",
    "rate_experiment",
    "one_sided_semiconcave_rate",
]

# monotone for any value <= 1; larger values mean less numerical diffusion
CFL = 0.9
PAD_SIGMAS = 6.0
FLOOR_FIT_FACTOR = 3.0


@dataclass(frozen=True)
class Hamiltonian1d:
    """``abs`` (``|p|``), ``quadratic`` (``p^2/2``) or a tabulated piecewise-linear ``H``."""

    kind: str
    table_p: tuple | None = None
    table_H: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("abs", "quadratic", "tabulated"):
            raise ValueError(f"unknown Hamiltonian {self.kind!r}")
        if self.kind == "tabulated":
            p = np.asarray(self.table_p, dtype=float)
            h = np.asarray(self.table_H, dtype=float)
            if p.ndim != 1 or p.shape != h.shape or len(p) < 2 or np.any(np.diff(p) <= 0):
                raise ValueError("tabulated Hamiltonian needs increasing momenta and matching values")

    @classmethod
    def tabulated(cls, p, H) -> "Hamiltonian1d":
        return cls("tabulated", tuple(float(v) for v in p), tuple(float(v) for v in H))

    @classmethod
    def zero(cls) -> "Hamiltonian1d":
        return cls.tabulated([-1.0, 1.0], [0.0, 0.0])

    def __call__(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "abs":
            return np.abs(p)
        if self.kind == "quadratic":
            return 0.5 * p * p
        # linear extension beyond the table keeps H globally Lipschitz
        tp, th = np.asarray(self.table_p), np.asarray(self.table_H)
        out = np.interp(p, tp, th)
        lo, hi = p < tp[0], p > tp[-1]
        out[lo] = th[0] + (p[lo] - tp[0]) * (th[1] - th[0]) / (tp[1] - tp[0])
        out[hi] = th[-1] + (p[hi] - tp[-1]) * (th[-1] - th[-2]) / (tp[-1] - tp[-2])
        return out

    def max_slope(self, lip: float) -> float:
        """``max |H'|`` on ``[-lip, lip]``."""
        if self.kind == "abs":
            return 1.0
        if self.kind == "quadratic":
            return float(lip)
        tp, th = np.asarray(self.table_p), np.asarray(self.table_H)
        slopes = np.abs(np.diff(th) / np.diff(tp))
        touch = (tp[1:] >= -lip) & (tp[:-1] <= lip)
        if not touch.any():
            touch = np.zeros_like(touch)
            touch[0 if lip < tp[0] else -1] = True
        return float(slopes[touch].max())

    @property
    def convex(self) -> bool:
        if self.kind != "tabulated":
            return True
        tp, th = np.asarray(self.table_p), np.asarray(self.table_H)
        return bool(np.all(np.diff(np.diff(th) / np.diff(tp)) >= -1e-12))


@dataclass(frozen=True)
class Terminal1d:
    name: str
    g: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    convex: bool = False
    semiconcave: bool = False


def _semiconcave_terminal(R: float) -> Terminal1d:
    # -x^2/2 near 0, flattened to -R^2/2 at infinity; Lipschitz constant from a dense sample
    def g(x):
        return -0.5 * R * R * np.tanh(x * x / (R * R))

    xs = np.linspace(-6 * R, 6 * R, 200001)
    lip = float(np.max(np.abs(np.gradient(g(xs), xs[1] - xs[0]))))
    return Terminal1d("semiconcave", g, lip, semiconcave=True)


def terminal(name: str, **params) -> Terminal1d:
    """Library terminal data: ``abs``, ``square`` (quadratic on ``|x| <= radius``), ``semiconcave``, ``constant``, ``bump``."""
    if name == "abs":
        return Terminal1d("abs", np.abs, 1.0, convex=True)
    if name == "square":
        r = float(params.get("radius", 4.0))

        # x^2/2 inside the radius, continued linearly so the slope stays bounded by r
        def g(x):
            ax = np.abs(x)
            return np.where(ax <= r, 0.5 * x * x, r * ax - 0.5 * r * r)

        return Terminal1d("square", g, r, convex=True, semiconcave=True)
    if name == "semiconcave":
        return _semiconcave_terminal(float(params.get("R", 1.0)))
    if name == "constant":
        c = float(params.get("value", 1.0))
        return Terminal1d("constant", lambda x: np.full_like(np.asarray(x, dtype=float), c), 0.0, convex=True, semiconcave=True)
    if name == "bump":
        s0 = float(params.get("width", 0.3))

        def g(x):
            return np.exp(-0.5 * x * x / s0**2)

        return Terminal1d("bump", g, math.exp(-0.5) / s0, semiconcave=True)
    raise ValueError(f"unknown terminal {name!r}")


TERMINALS = ("abs", "square", "semiconcave", "constant", "bump")


@dataclass(frozen=True)
class HjProblem1d:
    domain: tuple
    grid_n: int
    terminal: Terminal1d
    hamiltonian: Hamiltonian1d
    horizon: float

    def __post_init__(self):
        a, b = (float(v) for v in self.domain)
        if not b > a:
            raise ValueError("domain must be a nonempty interval")
        if self.grid_n < 64:
            raise ValueError("grid_n must be at least 64")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "domain", (a, b))

    @property
    def dx(self) -> float:
        a, b = self.domain
        return (b - a) / (self.grid_n - 1)

    @property
    def speed(self) -> float:
        return self.hamiltonian.max_slope(self.terminal.lipschitz)

    def window(self, x: np.ndarray) -> np.ndarray:
        """Central half of the domain."""
        a, b = self.domain
        q = 0.25 * (b - a)
        return (x >= a + q - 1e-12) & (x <= b - q + 1e-12)


@dataclass(frozen=True)
class HjSolution:
    x: np.ndarray
    u: np.ndarray
    steps: int
    dt: float
    pad: float
    pad_sufficient: bool


def _solve(prob: HjProblem1d, t: float, eps: float) -> HjSolution:
    T = prob.horizon
    if not 0.0 <= t <= T:
        raise ValueError(f"t={t!r} outside [0, {T!r}]")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    tau = T - t
    a, _ = prob.domain
    dx = prob.dx
    alpha = prob.speed
    pad = T * alpha + PAD_SIGMAS * math.sqrt(eps * T)
    npad = int(math.ceil(pad / dx)) + 2
    x = a + dx * np.arange(-npad, prob.grid_n + npad)
    u = np.asarray(prob.terminal.g(x), dtype=float).copy()
    inner = slice(npad, npad + prob.grid_n)
    # distance the reporting window keeps from the padded edge, in units of the needed reach
    reach = tau * alpha + PAD_SIGMAS * math.sqrt(eps * tau)
    pad_ok = (npad * dx + 0.25 * (prob.domain[1] - prob.domain[0])) >= reach
    if tau == 0.0:
        return HjSolution(x[inner], u[inner], 0, 0.0, pad, pad_ok)
    # a vanishing Hamiltonian still needs time steps for the diffusion
    speed = alpha if alpha > 0 else 1.0
    steps = int(math.ceil(tau / (CFL * dx / speed)))
    dt = tau / steps
    H = prob.hamiltonian
    ab = None
    if eps > 0:
        r = eps * dt / dx**2
        N = len(x)
        ab = np.zeros((3, N))
        ab[0, 1:] = -r
        ab[1, :] = 1 + 2 * r
        ab[2, :-1] = -r
        ab[1, 0] = ab[1, -1] = 1 + r  # reflecting ends
    ue = np.empty(len(u) + 2)
    for _ in range(steps):
        ue[1:-1] = u
        ue[0], ue[-1] = u[0], u[-1]
        pm = (ue[1:-1] - ue[:-2]) / dx
        pp = (ue[2:] - ue[1:-1]) / dx
        u = u - dt * (H(0.5 * (pm + pp)) - 0.5 * alpha * (pp - pm))
        if ab is not None:
            u = solve_banded((1, 1), ab, u)
    return HjSolution(x[inner], u[inner], steps, dt, pad, pad_ok)


def solve_hj_first_order(prob: HjProblem1d, t: float) -> HjSolution:
    return _solve(prob, t, 0.0)


def solve_hj_viscous(prob: HjProblem1d, t: float, eps: float) -> HjSolution:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return _solve(prob, t, eps)


@dataclass(frozen=True)
class RateReport:
    eps_list: tuple
    errors: tuple
    slope: float
    slope_ci: float
    constant: float
    runtime_s: tuple
    floor: float
    status: str
    fitted: tuple
    monotone: bool
    one_sided: bool = False
    refinement_change: tuple | None = None

    @property
    def resolvable(self) -> bool:
        return self.status == "ok"


def _validate_eps(eps_list) -> tuple:
    eps = tuple(float(e) for e in eps_list)
    if len(eps) < 4:
        raise ValueError("need at least four eps values")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps values must be positive and strictly decreasing")
    if eps[0] / eps[-1] < 100.0 * (1 - 1e-9):
        raise ValueError("eps values must span at least two decades")
    return eps


def _gap(ue: np.ndarray, u: np.ndarray, mask: np.ndarray, one_sided: bool) -> float:
    d = (ue - u)[mask]
    return max(0.0, float(d.max())) if one_sided else float(np.abs(d).max())


def _rate(prob: HjProblem1d, eps_list, t_probe, one_sided: bool, check_refinement: bool) -> RateReport:
    eps = _validate_eps(eps_list)
    t = 0.5 * prob.horizon if t_probe is None else float(t_probe)
    ref = solve_hj_first_order(prob, t)
    mask = prob.window(ref.x)
    # roundoff-level floor relative to the size of the solution
    floor = 1e-12 * (1.0 + float(np.max(np.abs(ref.u[mask]))))
    errors, times = [], []
    for e in eps:
        t0 = time.perf_counter()
        sol = solve_hj_viscous(prob, t, e)
        errors.append(_gap(sol.u, ref.u, mask, one_sided))
        times.append(time.perf_counter() - t0)
    fitted = tuple(err > FLOOR_FIT_FACTOR * floor for err in errors)
    n_fit = sum(fitted)
    if n_fit >= 2:
        le = np.log(np.array(eps)[list(fitted)])
        lr = np.log(np.array(errors)[list(fitted)])
        coef, res, *_ = np.polyfit(le, lr, 1, full=True)
        slope = float(coef[0])
        slope_ci = float(math.sqrt(res[0] / n_fit)) if len(res) else 0.0
        status = "ok"
    else:
        slope, slope_ci = math.nan, math.nan
        status = "rate not resolvable at this resolution"
    constant = max(err / math.sqrt(e) for err, e in zip(errors, eps))
    monotone = all(b <= a + FLOOR_FIT_FACTOR * floor for a, b in zip(errors, errors[1:]))
    change = None
    if check_refinement:
        fine = HjProblem1d(prob.domain, 2 * prob.grid_n - 1, prob.terminal, prob.hamiltonian, prob.horizon)
        fref = solve_hj_first_order(fine, t)
        fmask = fine.window(fref.x)
        change = []
        for e, err in zip(eps, errors):
            ferr = _gap(solve_hj_viscous(fine, t, e).u, fref.u, fmask, one_sided)
            change.append(abs(ferr - err) / max(err, floor))
        change = tuple(change)
    return RateReport(
        eps, tuple(errors), slope, slope_ci, constant, tuple(times), floor, status, fitted, monotone, one_sided, change
    )


def rate_experiment(prob: HjProblem1d, eps_list, t_probe: float | None = None, check_refinement: bool = False) -> RateReport:
    """Sup-norm gaps ``|u^eps - u|`` on the reporting window and their log-log slope in ``eps``."""
    return _rate(prob, eps_list, t_probe, one_sided=False, check_refinement=check_refinement)


def one_sided_semiconcave_rate(
    prob: HjProblem1d, eps_list, t_probe: float | None = None, check_refinement: bool = False
) -> RateReport:
    """Signed gaps ``max(0, sup (u^eps - u))``; meant for semiconcave ``g`` and convex ``H``."""
    if not prob.hamiltonian.convex:
        raise ValueError("one-sided rate needs a convex Hamiltonian")
    return _rate(prob, eps_list, t_probe, one_sided=True, check_refinement=check_refinement)
