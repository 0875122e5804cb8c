from __future__ import annotations

import math

import numpy as np
import pytest

from wasserhj.fixtures import random_cloud
from wasserhj.functionals import CostModel, FunctionalSpec
from wasserhj.hopflax import (
    HopfLaxProblem,
    dpp_check,
    dpp_residual,
    hopflax_value,
    lagrangian_ot_cost,
    lipschitz_audit,
    optimizer_norm_scaling,
    time_monotonicity,
)
from wasserhj.measures import DiscreteMeasure
from wasserhj.ot_core import w2

QUAD = CostModel.quadratic()
HALF_M2 = FunctionalSpec.second_moment(scale=0.5)


def prob(terminal=HALF_M2, L=QUAD, T=1.0, **kw):
    return HopfLaxProblem(terminal, L, T, **kw)


def dirac_closed_form(x: float, s: float) -> float:
    # min_y y^2/2 + (y - x)^2 / (2 s)
    return x * x / (2.0 * (1.0 + s))


def test_lagrangian_ot_cost_examples(rng):
    mu = DiscreteMeasure(rng.normal(size=(5, 2)))
    val, plan = lagrangian_ot_cost(mu, mu, 1.0, QUAD)
    assert val == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(plan.x, plan.y)
    val, _ = lagrangian_ot_cost(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]), 2.0, CostModel.power(1.5))
    assert val == pytest.approx((1 / 1.5) * 0.5**1.5, abs=1e-4)


def test_lagrangian_ot_cost_quadratic_scaling(rng):
    mu = DiscreteMeasure(rng.normal(size=(5, 2)))
    nu = DiscreteMeasure(rng.normal(size=(5, 2)) + 1.0)
    d2 = w2(mu, nu).distance ** 2
    for s in (0.5, 1.0, 2.0):
        val, _ = lagrangian_ot_cost(mu, nu, s, QUAD)
        assert val == pytest.approx(d2 / (2 * s * s), rel=1e-10)


def test_terminal_time_is_exact(rng):
    mu = random_cloud(rng, 4, 2)
    for F in (HALF_M2, FunctionalSpec.soft_norm_potential()):
        sol = hopflax_value(1.0, mu, prob(F))
        assert sol.value == F(mu)
        assert sol.solver_report.tolerance == 0.0


@pytest.mark.parametrize("x", [-1.5, 0.5, 2.0])
@pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.75])
def test_dirac_quadratic_closed_form(x, t):
    sol = hopflax_value(t, DiscreteMeasure.dirac([x]), prob())
    s = 1.0 - t
    assert sol.value == pytest.approx(dirac_closed_form(x, s), abs=1e-4)
    assert sol.optimizer_measure.points[0, 0] == pytest.approx(x / (1 + s), abs=1e-3)
    assert sol.solver_report.status == "inf approximated"


def test_cloud_quadratic_potential_closed_form(rng):
    # atoms decouple: each minimizes alpha/2 |y - c|^2 + |y - x|^2 / (2 s)
    alpha, c = 1.5, np.array([0.3, -0.2])
    F = FunctionalSpec.quadratic_potential(alpha, center=c)
    mu = random_cloud(rng, 5, 2, weighted=True)
    s = 0.8
    expected = float(mu.weights @ (alpha * np.sum((mu.points - c) ** 2, 1) / (2 * (1 + alpha * s))))
    sol = hopflax_value(1.0 - s, mu, HopfLaxProblem(F, QUAD, 1.0))
    assert sol.value == pytest.approx(expected, abs=1e-6)


def test_half_w2_terminal_geodesic_closed_form(rng):
    anchor = random_cloud(rng, 4, 2, shift=[2.0, 0.0])
    mu = random_cloud(rng, 4, 2)
    F = FunctionalSpec.half_w2_to(anchor)
    s = 0.5
    expected = w2(mu, anchor).distance ** 2 / (2 * (1 + s))
    sol = hopflax_value(0.5, mu, HopfLaxProblem(F, QUAD, 1.0))
    assert sol.value == pytest.approx(expected, abs=1e-5)


def test_power_lagrangian_dirac_against_grid_search():
    # min_y sqrt(1 + y^2) + s * |(y - x)/s|^p / p on a fine 1-D grid
    L = CostModel.power(1.5)
    F = FunctionalSpec.soft_norm_potential()
    x, s = 2.0, 0.6
    y = np.linspace(-1, 3, 400_001)
    brute = float(np.min(np.sqrt(1 + y**2) + s * np.abs((y - x) / s) ** 1.5 / 1.5))
    sol = hopflax_value(1.0 - s, DiscreteMeasure.dirac([x]), HopfLaxProblem(F, L, 1.0))
    assert sol.value == pytest.approx(brute, abs=1e-6)


def test_constant_terminal(rng):
    mu = random_cloud(rng, 3, 2)
    p = prob(FunctionalSpec.constant_value(2.5))
    sol = hopflax_value(0.3, mu, p)
    assert sol.value == pytest.approx(2.5, abs=1e-12)
    assert sol.optimizer_measure.allclose(mu, atol=1e-6)
    assert dpp_residual(0.0, 0.5, mu, p) == pytest.approx(0.0, abs=1e-9)


def test_value_bounded_by_terminal(rng):
    p = prob(FunctionalSpec.soft_norm_potential(), CostModel.power(1.5))
    for _ in range(5):
        mu = random_cloud(rng, 3, 2)
        sol = hopflax_value(0.2, mu, p)
        assert sol.value <= p.terminal(mu) + 1e-12
        assert sol.value >= p.terminal.lower_bound - 1e-12


def test_dpp_dirac_chain():
    mu = DiscreteMeasure.dirac([2.0])
    res, tol = dpp_check(0.0, 0.5, mu, prob())
    assert abs(res) <= 1e-4
    assert tol >= 0


def test_dpp_degenerate_step():
    mu = DiscreteMeasure.dirac([1.0])
    res, tol = dpp_check(0.2, 0.2 + 1e-6, mu, prob())
    assert abs(res) <= max(tol, 1e-6)


@pytest.mark.parametrize("L", [QUAD, CostModel.power(1.5)], ids=["quadratic", "power"])
@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_dpp_corpus(L, n):
    rng = np.random.default_rng(100 + n)
    mu = random_cloud(rng, n, 2)
    for F in (HALF_M2, FunctionalSpec.soft_norm_potential()):
        assert abs(dpp_residual(0.0, 0.4, mu, prob(F, L))) <= 1e-3


def test_dpp_argument_validation():
    with pytest.raises(ValueError):
        dpp_check(0.5, 0.5, DiscreteMeasure.dirac([0.0]), prob())


def test_problem_validation():
    with pytest.raises(ValueError):
        HopfLaxProblem(FunctionalSpec.entropy(), QUAD, 1.0)
    with pytest.raises(ValueError):
        HopfLaxProblem(HALF_M2, QUAD, 0.0)
    with pytest.raises(ValueError):
        HopfLaxProblem(FunctionalSpec.neg_half_w2_to(DiscreteMeasure.dirac([0.0])), QUAD, 1.0)
    with pytest.raises(ValueError):
        hopflax_value(1.5, DiscreteMeasure.dirac([0.0]), prob())


def test_lipschitz_audit_examples():
    p = prob(FunctionalSpec.soft_norm_potential())
    pair = [(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]))]
    rep = lipschitz_audit(0.0, p, pair)
    assert rep.passed
    assert rep.spatial_gaps[0][0] <= 1.0 + 1e-6
    const = prob(FunctionalSpec.constant_value(1.0))
    rep = lipschitz_audit(0.5, const, pair)
    assert all(g == pytest.approx(0.0, abs=1e-12) for g, _ in rep.spatial_gaps)


def test_lipschitz_audit_needs_constant():
    with pytest.raises(ValueError):
        lipschitz_audit(0.0, prob(), [(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]))])


def test_time_monotonicity_dirac():
    vals, tols, ok = time_monotonicity(DiscreteMeasure.dirac([2.0]), prob(), np.linspace(0, 1, 11))
    assert ok
    expected = [dirac_closed_form(2.0, 1.0 - t) for t in np.linspace(0, 1, 11)]
    assert np.allclose(vals, expected, atol=1e-4)


def test_norm_scaling_dirac():
    p = prob(FunctionalSpec.soft_norm_potential())
    rep = optimizer_norm_scaling(DiscreteMeasure.dirac([2.0]), p, 0.0, [0.2, 0.1, 0.05, 0.025])
    assert rep.passed
    assert rep.slope == pytest.approx(1.0, abs=0.2)


def test_norm_scaling_constant_terminal():
    p = prob(FunctionalSpec.constant_value(0.0))
    rep = optimizer_norm_scaling(DiscreteMeasure.dirac([2.0]), p, 0.0, [0.2, 0.1, 0.05])
    assert rep.passed
    assert max(rep.norms) <= 1e-6


def test_norm_scaling_validation():
    p = prob(FunctionalSpec.soft_norm_potential())
    with pytest.raises(ValueError):
        optimizer_norm_scaling(DiscreteMeasure.dirac([0.0]), p, 0.0, [0.1, 0.2, 0.05])


def test_seed_determinism(rng):
    mu = random_cloud(rng, 4, 2)
    p = prob(FunctionalSpec.soft_norm_potential(), CostModel.power(1.5), seed=9)
    a, b = hopflax_value(0.2, mu, p), hopflax_value(0.2, mu, p)
    assert a.value == b.value
    assert np.array_equal(a.optimizer_measure.points, b.optimizer_measure.points)
