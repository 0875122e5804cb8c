"""Acceptance criteria, one test and one printed verdict line per criterion."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

from wasserhj.cli import main
from wasserhj.convexity import (
    ConvexityCheck,
    div_bound,
    flat_derivative_convexity_check,
    geodesic_convexity_residual,
    mixture_convexity_residual,
    weak_action_bound,
)
from wasserhj.fixtures import (
    bures_w2,
    gaussian_cloud,
    grid_corpus,
    quantile_gaussian_1d,
    random_cloud,
    random_velocity_plan,
    small_ot_instances,
    write_corpus,
)
from wasserhj.functionals import CostModel, FunctionalSpec, entropy, entropy_star, fenchel_gap, fisher_information
from wasserhj.grid import GridDensity
from wasserhj.hopflax import (
    HopfLaxProblem,
    dpp_residual,
    hopflax_value,
    lipschitz_audit,
    optimizer_norm_scaling,
    time_monotonicity,
)
from wasserhj.measures import Coupling, DiscreteMeasure
from wasserhj.ot_core import w2
from wasserhj.viscosity import Hamiltonian1d, HjProblem1d, one_sided_semiconcave_rate, rate_experiment, terminal

VERDICTS: list[str] = []


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def test_1_ot_exactness():
    worst_gap, worst_time = 0.0, 0.0
    for mu, nu in small_ot_instances(seed=0, count=40, max_atoms=6):
        t0 = time.perf_counter()
        d = w2(mu, nu).distance
        worst_time = max(worst_time, time.perf_counter() - t0)
        brute = min(
            sum(float(np.sum((mu.points[i] - nu.points[j]) ** 2)) for i, j in enumerate(p)) / mu.n
            for p in itertools.permutations(range(nu.n))
        )
        worst_gap = max(worst_gap, abs(d - math.sqrt(brute)))
    t0 = time.perf_counter()
    d = w2(quantile_gaussian_1d(0.0, 1.0, 400), quantile_gaussian_1d(2.0, 1.0, 400)).distance
    worst_time = max(worst_time, time.perf_counter() - t0)
    rel = abs(d - bures_w2(0.0, 1.0, 2.0, 1.0)) / 2.0
    ok = worst_gap <= 1e-9 and rel <= 0.02 and worst_time < 5.0
    verdict(1, "OT exactness", ok, f"brute-force gap {worst_gap:.2e} (<=1e-9), Bures rel err {rel:.2e} (<=2%), max time {worst_time:.2f}s (<5s)")


def test_2_entropy_fisher():
    errs_h, errs_f = [], []
    for d, n, sigma in ((1, 512, 1.0), (1, 512, 0.6), (2, 128, 1.0), (2, 128, 1.4)):
        rho = GridDensity.gaussian([0.0] * d, sigma, n)
        h_exact = d * (-0.5 * math.log(2 * math.pi * sigma**2) - 0.5)
        errs_h.append(abs(entropy(rho) - h_exact) / abs(h_exact))
        errs_f.append(abs(fisher_information(rho) - d / sigma**2) / (d / sigma**2))
    star = min(entropy_star(r) for r in grid_corpus(0) + grid_corpus(1))
    ok = max(errs_h) <= 0.01 and max(errs_f) <= 0.02 and star >= -1e-6
    verdict(2, "entropy/Fisher", ok, f"entropy rel err {max(errs_h):.2e} (<=1%), Fisher rel err {max(errs_f):.2e} (<=2%), min entropy_star {star:.4f} (>=-1e-6)")


def test_3_fenchel():
    rng = np.random.default_rng(2024)
    families = [CostModel.quadratic(), CostModel.power(1.5)]
    worst = math.inf
    for k in range(500):
        L = families[k % 2]
        if k % 4 < 2:
            # near-optimal pairs probe the bound where it is tight
            mu = DiscreteMeasure(rng.normal(size=(4, 2)))
            p = rng.normal(size=(4, 2))
            r = np.linalg.norm(p, axis=1, keepdims=True)
            v = -p if L.family == "quadratic" else -(r ** (L.conjugate_exponent - 2.0)) * p
            v = v + 10.0 ** rng.uniform(-8, -2) * rng.normal(size=v.shape)
            worst = min(worst, fenchel_gap(Coupling.from_map(mu, p), Coupling.from_map(mu, v), L))
            continue
        g = random_velocity_plan(rng, 3, 2)
        base = g.first_marginal
        xs, vs, ws = [], [], []
        for x, w in zip(base.points, base.weights):
            m = int(rng.integers(1, 4))
            for _ in range(m):
                xs.append(x)
                vs.append(rng.normal(size=2))
                ws.append(w / m)
        worst = min(worst, fenchel_gap(g, Coupling(np.array(xs), np.array(vs), np.array(ws)), L))
    opt = 0.0
    for L in families + [CostModel.quadratic(2.0), CostModel.power(1.25)]:
        for _ in range(10):
            mu = DiscreteMeasure(rng.normal(size=(4, 2)))
            p = rng.normal(size=(4, 2))
            if L.family == "quadratic":
                v = -p / L.a
            else:
                v = -(np.linalg.norm(p, axis=1, keepdims=True) ** (L.conjugate_exponent - 2.0)) * p
            opt = max(opt, abs(fenchel_gap(Coupling.from_map(mu, p), Coupling.from_map(mu, v), L)))
    ok = worst >= -1e-9 and opt <= 1e-6
    verdict(3, "Fenchel", ok, f"min gap over 500 pairs {worst:.3e} (>=-1e-9), max gap on optimal pairs {opt:.2e} (<=1e-6)")


def _random_pairs(rng, count):
    pairs = []
    for _ in range(count):
        n1, n2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        pairs.append((random_cloud(rng, n1, 2), random_cloud(rng, n2, 2, shift=rng.normal(size=2))))
    return pairs


def test_4_hopf_lax():
    quad, power = CostModel.quadratic(), CostModel.power(1.5)
    half_m2 = FunctionalSpec.second_moment(scale=0.5)
    soft = FunctionalSpec.soft_norm_potential()
    rng = np.random.default_rng(7)
    mu = random_cloud(rng, 4, 2)
    exact_T = all(hopflax_value(1.0, mu, HopfLaxProblem(F, quad, 1.0)).value == F(mu) for F in (half_m2, soft))
    closed = max(
        abs(hopflax_value(t, DiscreteMeasure.dirac([x]), HopfLaxProblem(half_m2, quad, 1.0)).value - x * x / (2 * (2 - t)))
        for x in (-1.5, 0.5, 2.0)
        for t in (0.0, 0.25, 0.5, 0.75)
    )
    dpp = 0.0
    for n in (1, 2, 5, 10):
        cloud = random_cloud(np.random.default_rng(n), n, 2)
        for L in (quad, power):
            for F in (half_m2, soft):
                dpp = max(dpp, abs(dpp_residual(0.0, 0.4, cloud, HopfLaxProblem(F, L, 1.0))))
    audit_ok, mono_ok = True, True
    for L in (quad, power):
        prob = HopfLaxProblem(soft, L, 1.0)
        rep = lipschitz_audit(0.0, prob, _random_pairs(np.random.default_rng(11), 100))
        audit_ok &= rep.spatial_violations == 0
        mono_ok &= rep.monotone_violations == 0
        mono_ok &= time_monotonicity(mu, prob, np.linspace(0, 1, 11))[2]
    ns = optimizer_norm_scaling(DiscreteMeasure.dirac([2.0]), HopfLaxProblem(soft, quad, 1.0), 0.0, [0.2, 0.1, 0.05, 0.025])
    ok = exact_T and closed <= 1e-4 and dpp <= 1e-3 and audit_ok and mono_ok and ns.passed
    verdict(
        4,
        "Hopf-Lax",
        ok,
        f"V(T)=G exact {exact_T}, Dirac closed-form err {closed:.2e} (<=1e-4), DPP residual {dpp:.2e} (<=1e-3), "
        f"Lipschitz audit {audit_ok}, monotone {mono_ok}, norm bound violations {ns.violations} (slope {ns.slope:.2f})",
    )


def test_5_convexity():
    rng = np.random.default_rng(5)
    m2 = FunctionalSpec.second_moment()
    ident = max(
        abs(geodesic_convexity_residual(ConvexityCheck(m2, 2.0), random_cloud(rng, 5, 2), random_cloud(rng, 5, 2, shift=1.0)).worst)
        for _ in range(10)
    )
    mix = -math.inf
    S = np.array([[1.0, 0.3], [0.3, 0.5]])
    for s in range(4):
        mu = gaussian_cloud([0, 0], np.eye(2), 64, seed=s)
        nu0 = gaussian_cloud([1, 0], S, 64, seed=s + 10)
        nu1 = gaussian_cloud([-1, 1], 2 * np.eye(2), 64, seed=s + 20)
        for F, lam in ((m2, 2.0), (FunctionalSpec.quadratic_potential(0.8), 0.8), (FunctionalSpec.quadratic_interaction(), 0.0)):
            mix = max(mix, mixture_convexity_residual(F, lam, mu, nu0, nu1, 0.5).worst)
    support = DiscreteMeasure.uniform(np.array([[x, y] for x in range(3) for y in range(3)], dtype=float))
    segs = [((0, 0), (2, 0)), ((0, 0), (2, 2)), ((0, 2), (2, 0)), ((1, 0), (1, 2))]
    convex = [m2, FunctionalSpec.quadratic_potential(2.0, center=[1, 1]), FunctionalSpec.soft_norm_potential(center=[0.5, 0.5])]
    false_neg = sum(flat_derivative_convexity_check(F, support, segs).violations for F in convex)
    witness = flat_derivative_convexity_check(FunctionalSpec.potential(lambda x: -np.sum(x**2, 1)), support, segs).violations
    ok = ident <= 1e-9 and mix <= 1e-6 and false_neg == 0 and witness > 0
    verdict(5, "convexity", ok, f"M2 identity residual {ident:.2e} (<=1e-9), mixture residual {mix:.2e} (<=1e-6), false negatives {false_neg}, concave witness flagged {witness}")


def test_6_divergence_bounds():
    corpus = grid_corpus()
    worst_ratio, all_pass = -math.inf, True
    for rho in corpus:
        nu = GridDensity.gaussian([0.3] * rho.dim, 1.3, 256 if rho.dim == 1 else 32)
        rep = div_bound(rho, nu)
        all_pass &= rep.passed
        worst_ratio = max(worst_ratio, rep.computed / rho.dim)
    sig = div_bound(GridDensity.gaussian([0.0], 1.0, 512), GridDensity.gaussian([0.0], 2.0, 512)).computed
    sig_rel = abs(sig - (1 - 2.0)) / 1.0
    wa = weak_action_bound(FunctionalSpec.half_w2_to(DiscreteMeasure.dirac([0.0, 0.0])), GridDensity.gaussian([0.0, 0.0], 1.0, 40))
    wa_rel = abs(wa.computed - 2.0) / 2.0
    ok = all_pass and sig_rel <= 0.05 and wa_rel <= 0.02 and wa.passed
    verdict(6, "divergence/weak action", ok, f"max div_bound/d {worst_ratio:.3f} (<=1.05), sigma=2 rel err {sig_rel:.2e} (<=5%), weak action rel err {wa_rel:.2e} (<=2%)")


def test_7_vanishing_viscosity():
    eps = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    t0 = time.perf_counter()
    rep = rate_experiment(HjProblem1d((-2.0, 2.0), 2000, terminal("abs"), Hamiltonian1d("abs"), 1.0), eps)
    runtime = time.perf_counter() - t0
    within = all(err <= rep.constant * math.sqrt(e) * (1 + 1e-12) for e, err in zip(rep.eps_list, rep.errors))
    one = one_sided_semiconcave_rate(HjProblem1d((-2.0, 2.0), 2000, terminal("semiconcave"), Hamiltonian1d("quadratic"), 1.0), eps)
    ok = rep.resolvable and 0.45 <= rep.slope <= 1.05 and within and runtime < 60.0 and one.resolvable and 0.85 <= one.slope <= 1.15
    verdict(7, "vanishing viscosity", ok, f"slope {rep.slope:.3f} in [0.45,1.05], C={rep.constant:.3f}, runtime {runtime:.2f}s (<60s), one-sided slope {one.slope:.3f} in [0.85,1.15]")


def test_8_determinism(tmp_path):
    fx = tmp_path / "fx"
    write_corpus(fx)
    commands = [
        ["w2", "--mu", fx / "cloud_a.txt", "--nu", fx / "cloud_b.txt"],
        ["w2", "--mu", fx / "cloud_a.txt", "--nu", fx / "cloud_c.txt", "--method", "entropic", "--reg", "0.05"],
        ["hopflax", "--mu", fx / "cloud_c.txt", "--terminal", "soft_norm", "--lagrangian", "power", "--p", "1.5"],
        ["dpp-check", "--mu", fx / "cloud_a.txt", "--terminal", "soft_norm"],
        ["convexity-check", "geodesic", "--mu0", fx / "cloud_a.txt", "--mu1", fx / "cloud_b.txt"],
        ["convexity-check", "divbound", "--rho", fx / "gauss_2d.grid", "--nu", fx / "gauss_2d_shift.grid"],
        ["vv-rate", "--eps", "0.1,0.03,0.01,0.003,0.001", "--grid", "500"],
        ["fenchel-check", "--g", fx / "plan_g.txt", "--xi", fx / "plan_xi.txt"],
        ["functional", "--kind", "fisher", "--rho", fx / "gauss_1d.grid"],
    ]
    differing = []
    for k, cmd in enumerate(commands):
        outs = []
        for rep in range(2):
            path = tmp_path / f"r{k}_{rep}.tsv"
            main([str(a) for a in cmd] + ["--seed", "12345", "--out", str(path)])
            outs.append(path.read_bytes())
        if outs[0] != outs[1] or not outs[0]:
            differing.append(cmd[0])
    verdict(8, "determinism", not differing, f"{len(commands) - len(differing)}/{len(commands)} CLI runs byte-identical")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
