from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erfc, erfcx, logsumexp

from wasserhj.viscosity import (
    Hamiltonian1d,
    HjProblem1d,
    one_sided_semiconcave_rate,
    rate_experiment,
    solve_hj_first_order,
    solve_hj_viscous,
    terminal,
)

ABS = Hamiltonian1d("abs")
QUADH = Hamiltonian1d("quadratic")
EPS5 = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def abs_problem(n=2000):
    return HjProblem1d((-2.0, 2.0), n, terminal("abs"), ABS, 1.0)


def exact_abs_viscous(x: np.ndarray, tau: float, eps: float) -> np.ndarray:
    """``u_tau + |u_x| = eps u_xx`` with ``u(0) = |x|``, built from the slope ``p = u_x`` on ``x >= 0``."""
    s = 2.0 * math.sqrt(eps * tau)

    def slope(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * (erfc((tau - y) / s) - np.exp(-((y - tau) ** 2) / (4 * eps * tau)) * erfcx((y + tau) / s))

    def slope_x_at_0(sig):
        ss = 2.0 * math.sqrt(eps * sig)
        z = sig / ss
        k = 2.0 / (math.sqrt(math.pi) * ss) * math.exp(-z * z)
        return 0.5 * (k - (erfc(z) / eps - k))

    u0 = quad(lambda sig: eps * slope_x_at_0(sig), 0.0, tau, limit=200)[0]
    ax = np.abs(x)
    return np.array([u0 + quad(slope, 0.0, a, limit=200)[0] for a in ax])


def cole_hopf(g, x: np.ndarray, tau: float, eps: float) -> np.ndarray:
    """``u_tau + u_x^2/2 = eps u_xx`` via ``u = -2 eps log w`` and the heat kernel."""
    y = np.linspace(-12.0, 12.0, 96001)
    dy = y[1] - y[0]
    logw0 = -g(y) / (2 * eps)
    out = []
    for xi in x:
        lk = -((xi - y) ** 2) / (4 * eps * tau) - 0.5 * math.log(4 * math.pi * eps * tau)
        out.append(-2 * eps * (logsumexp(logw0 + lk) + math.log(dy)))
    return np.array(out)


def test_first_order_abs_closed_form():
    prob = abs_problem()
    sol = solve_hj_first_order(prob, 0.5)
    m = prob.window(sol.x)
    exact = np.maximum(np.abs(sol.x) - 0.5, 0.0)
    err = np.abs(sol.u - exact)[m]
    assert err.max() <= 5e-3
    # away from the corners only the grid offset of the minimum remains (x = 0 is not a node)
    away = m & (np.abs(np.abs(sol.x) - 0.5) > 0.2)
    assert np.abs(sol.u - exact)[away].max() <= 0.5 * prob.dx + 1e-12


def test_first_order_quadratic_hopf_lax():
    # min_y y^2/2 + (x - y)^2 / 2 = x^2 / 4 on the window; smooth data, so first order in dx
    errs = []
    for n in (1000, 2000):
        prob = HjProblem1d((-2.0, 2.0), n, terminal("square"), QUADH, 1.0)
        sol = solve_hj_first_order(prob, 0.0)
        m = prob.window(sol.x)
        errs.append(np.abs(sol.u - sol.x**2 / 4)[m].max())
        assert errs[-1] <= 2.0 * prob.dx
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_terminal_time_returns_data():
    prob = abs_problem(500)
    sol = solve_hj_viscous(prob, 1.0, 0.1)
    assert np.array_equal(sol.u, np.abs(sol.x))
    assert sol.steps == 0


@pytest.mark.parametrize("eps", [0.1, 0.01, 0.001])
def test_viscous_abs_against_exact(eps):
    prob = abs_problem()
    sol = solve_hj_viscous(prob, 0.5, eps)
    xs = sol.x[prob.window(sol.x)][::25]
    ex = exact_abs_viscous(xs, 0.5, eps)
    got = np.interp(xs, sol.x, sol.u)
    assert np.abs(got - ex).max() <= 2e-3


def test_cole_hopf():
    eps, tau = 0.05, 0.5
    term = terminal("square")
    prob = HjProblem1d((-2.0, 2.0), 2000, term, QUADH, 1.0)
    sol = solve_hj_viscous(prob, 1.0 - tau, eps)
    xs = sol.x[prob.window(sol.x)][::50]
    ref = cole_hopf(term.g, xs, tau, eps)
    assert np.abs(np.interp(xs, sol.x, sol.u) - ref).max() <= 3e-3


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_heat_equation(eps):
    # H = 0: Gaussian bump stays Gaussian, width^2 grows by 2 eps tau
    w0, tau = 0.3, 1.0
    prob = HjProblem1d((-2.0, 2.0), 2000, terminal("bump", width=w0), Hamiltonian1d.zero(), 1.0)
    sol = solve_hj_viscous(prob, 0.0, eps)
    var = w0**2 + 2 * eps * tau
    exact = w0 / math.sqrt(var) * np.exp(-0.5 * sol.x**2 / var)
    m = prob.window(sol.x)
    assert np.abs(sol.u - exact)[m].max() <= 1e-3


def test_comparison_principle():
    lo = HjProblem1d((-2.0, 2.0), 800, terminal("abs"), QUADH, 1.0)
    hi_term = terminal("square", radius=1.0)
    # |x| <= huber(x) + 1/2 everywhere, so the order survives
    shifted = type(hi_term)("shifted", lambda x: hi_term.g(x) + 0.5, hi_term.lipschitz)
    hi = HjProblem1d((-2.0, 2.0), 800, shifted, QUADH, 1.0)
    for eps in (0.0, 0.05):
        a = solve_hj_viscous(lo, 0.3, eps) if eps else solve_hj_first_order(lo, 0.3)
        b = solve_hj_viscous(hi, 0.3, eps) if eps else solve_hj_first_order(hi, 0.3)
        assert np.all(a.u <= b.u + 1e-12)


@pytest.mark.parametrize("name", ["abs", "square", "semiconcave", "bump"])
def test_lipschitz_preserved(name):
    term = terminal(name)
    prob = HjProblem1d((-2.0, 2.0), 800, term, QUADH, 1.0)
    for eps in (0.0, 0.02):
        sol = solve_hj_viscous(prob, 0.2, eps) if eps else solve_hj_first_order(prob, 0.2)
        lip = np.max(np.abs(np.diff(sol.u))) / prob.dx
        assert lip <= term.lipschitz * (1 + 1e-9)


def test_rate_abs_fixture():
    rep = rate_experiment(abs_problem(), EPS5)
    assert rep.resolvable and rep.monotone
    assert 0.45 <= rep.slope <= 1.05
    for e, err in zip(rep.eps_list, rep.errors):
        assert err <= rep.constant * math.sqrt(e) * (1 + 1e-12)
    assert sum(rep.runtime_s) < 60.0


def test_rate_one_sided_semiconcave():
    prob = HjProblem1d((-2.0, 2.0), 2000, terminal("semiconcave", R=1.0), QUADH, 1.0)
    rep = one_sided_semiconcave_rate(prob, EPS5)
    assert rep.one_sided and rep.resolvable
    assert 0.85 <= rep.slope <= 1.15


def test_rate_constant_terminal_unresolvable():
    prob = HjProblem1d((-2.0, 2.0), 400, terminal("constant", value=2.0), ABS, 1.0)
    rep = rate_experiment(prob, EPS5)
    assert not rep.resolvable
    assert math.isnan(rep.slope)
    assert rep.status == "rate not resolvable at this resolution"


def test_rate_refinement_reported():
    rep = rate_experiment(abs_problem(400), (1e-1, 3e-2, 1e-2, 1e-3), check_refinement=True)
    assert rep.refinement_change is not None and len(rep.refinement_change) == 4


@pytest.mark.parametrize("eps", [(1e-1, 1e-2, 1e-3), (1e-1, 1e-2, 3e-2, 1e-3), (1e-1, 5e-2, 2e-2, 1e-2), (1e-1, 1e-2, 1e-3, 0.0)])
def test_rate_input_validation(eps):
    with pytest.raises(ValueError):
        rate_experiment(abs_problem(200), eps)


def test_problem_validation():
    with pytest.raises(ValueError):
        HjProblem1d((1.0, -1.0), 200, terminal("abs"), ABS, 1.0)
    with pytest.raises(ValueError):
        HjProblem1d((-1.0, 1.0), 10, terminal("abs"), ABS, 1.0)
    with pytest.raises(ValueError):
        terminal("sawtooth")
    with pytest.raises(ValueError):
        Hamiltonian1d("cubic")
    with pytest.raises(ValueError):
        solve_hj_viscous(abs_problem(200), 0.5, 0.0)
    assert not Hamiltonian1d.tabulated([-1, 0, 1], [0, 1, 0]).convex
