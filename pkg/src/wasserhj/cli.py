"""Command-line front end.

Exit codes: 0 all checks pass, 1 some check fails, 2 usage or input error,
3 solver or output failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import COMMANDS, CONVEXITY_MODES, SCHEMA, ConfigError, RunConfig, build_config, parse_config_text
from .convexity import (
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
    relaxed_hamiltonian,
    relaxed_lagrangian,
    second_moment,
)
from .grid import DegenerateDensityError, GridDensity, read_grid
from .hopflax import HopfLaxProblem, dpp_check, hopflax_value
from .measures import DiscreteMeasure, read_coupling, read_measure, write_coupling, write_measure
from .ot_core import OtSolverError, w2
from .report import Report, Row, emit_report
from .viscosity import Hamiltonian1d, HjProblem1d, one_sided_semiconcave_rate, rate_experiment, terminal


EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

DEFAULT_TOL = {
    "w2": 1e-9,
    "dpp-check": 1e-3,
    "convexity-check": 1e-6,
    "fenchel-check": 1e-6,
    "functional": 1e-9,
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def _read_any(path: Path):
    """Measure or grid file, told apart by the header."""
    text = Path(path).read_text()
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            if "atoms=" in s:
                return read_measure(path)
            if "spacing=" in s:
                return read_grid(path)
            break
    raise UsageError(f"{path}: neither a measure nor a grid file")


def _need(cfg: RunConfig, key: str) -> Path:
    p = cfg.path(key)
    if p is None:
        raise UsageError(f"{cfg.command}: missing --{key.replace('_', '-')}")
    return p


def _measure(cfg: RunConfig, key: str) -> DiscreteMeasure:
    m = _read_any(_need(cfg, key))
    if not isinstance(m, DiscreteMeasure):
        raise UsageError(f"--{key} must be a measure file")
    return m


def _grid(cfg: RunConfig, key: str) -> GridDensity:
    m = _read_any(_need(cfg, key))
    if not isinstance(m, GridDensity):
        raise UsageError(f"--{key} must be a grid file")
    return m


def _cost_model(params: dict) -> CostModel:
    name = params["lagrangian"]
    if name == "quadratic":
        return CostModel.quadratic(params["a"])
    if name == "power":
        return CostModel.power(params["p"])
    raise UsageError(f"unknown Lagrangian family {name!r}")


def _functional(name: str, cfg: RunConfig) -> FunctionalSpec:
    p = cfg.params
    if name == "second_moment":
        return FunctionalSpec.second_moment(scale=p["scale"])
    if name == "quadratic_potential":
        return FunctionalSpec.quadratic_potential(p["alpha"], scale=p["scale"])
    if name == "soft_norm":
        return FunctionalSpec.soft_norm_potential()
    if name == "constant":
        return FunctionalSpec.constant_value(p["value"])
    if name == "quadratic_interaction":
        return FunctionalSpec.quadratic_interaction()
    if name in ("half_w2", "neg_half_w2"):
        anchor = _read_any(_need(cfg, "anchor"))
        return FunctionalSpec.half_w2_to(anchor) if name == "half_w2" else FunctionalSpec.neg_half_w2_to(anchor)
    raise UsageError(f"unknown functional {name!r}")


def _problem(cfg: RunConfig) -> HopfLaxProblem:
    p = cfg.params
    G = _functional(p["terminal"], cfg)
    if p["lipschitz"] is not None:
        G = dataclasses.replace(G, lipschitz=p["lipschitz"])
    if G.lower_bound is None:
        raise UsageError(f"terminal {p['terminal']!r} is not bounded below")
    return HopfLaxProblem(G, _cost_model(p), p["horizon"], seed=cfg.seed, n_starts=p["starts"])


def _tol(cfg: RunConfig) -> float:
    return cfg.tol if cfg.tol is not None else DEFAULT_TOL.get(cfg.command, 1e-9)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _run_w2(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    mu, nu = _measure(cfg, "mu"), _measure(cfg, "nu")
    sol = w2(mu, nu, method=p["method"], reg=p["reg"])
    rep.note("method", sol.method)
    if p["expected"] is None:
        rep.add(Row.info("w2", sol.distance))
    else:
        rep.add(Row.info("w2", sol.distance))
        rep.add(Row.close("w2_vs_expected", sol.distance, p["expected"], _tol(cfg)))
    if sol.method == "entropic":
        rep.add(Row.info("dual_gap", sol.dual_gap))
        rep.add(Row.info("marginal_error", sol.marginal_error))
        rep.note("iterations", sol.iterations)
    if p["plan_out"]:
        write_coupling(cfg.path("plan_out"), sol.plan)
        rep.note("plan", p["plan_out"])


def _run_hopflax(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    prob = _problem(cfg)
    mu = _measure(cfg, "mu")
    T = prob.horizon
    ts = sorted(set(float(t) for t in p["t_grid"]))
    if ts[0] < 0 or ts[-1] > T:
        raise UsageError("t grid must lie in [0, horizon]")
    G_mu = prob.terminal.evaluate(mu)
    rep.note("status", "inf approximated")
    rep.note("lagrangian", prob.lagrangian.name)
    rep.note("terminal", prob.terminal.name)
    sols = []
    for t in ts:
        sol = hopflax_value(t, mu, prob)
        sols.append(sol)
        if t == T:
            rep.add(Row.close(f"V(t={t!r})=G(mu)", sol.value, G_mu, 0.0))
        else:
            rep.add(Row(f"V(t={t!r})<=G(mu)", sol.value, G_mu, sol.tolerance))
        rep.add(Row.info(f"solver_tol(t={t!r})", sol.tolerance))
    for (t0, a), (t1, b) in zip(zip(ts, sols), zip(ts[1:], sols[1:])):
        rep.add(Row(f"monotone({t0!r},{t1!r})", a.value, b.value, max(a.tolerance, b.tolerance)))
    if p["optimizer_out"]:
        write_measure(cfg.path("optimizer_out"), sols[0].optimizer_measure)
        rep.note("optimizer", p["optimizer_out"])


def _run_dpp(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    prob = _problem(cfg)
    mu = _measure(cfg, "mu")
    t = p["t"]
    s = p["s"] if p["s"] is not None else 0.5 * (t + prob.horizon)
    res, comb = dpp_check(t, s, mu, prob)
    rep.note("status", "inf approximated")
    rep.add(Row("dpp_residual", abs(res), _tol(cfg)))
    rep.add(Row.info("combined_solver_tol", comb))


def _segments(text: str | None) -> list:
    if not text:
        raise UsageError("flat mode needs --segments 'x0,y0:x1,y1;...'")
    out = []
    for seg in text.split(";"):
        seg = seg.strip()
        if not seg:
            continue
        try:
            a, b = seg.split(":")
            out.append((np.array([float(v) for v in a.split(",")]), np.array([float(v) for v in b.split(",")])))
        except ValueError:
            raise UsageError(f"malformed segment {seg!r}") from None
    return out


def _scope_note(rep: Report, in_scope: bool) -> None:
    rep.note("scope", "inside theorem scope" if in_scope else "outside theorem scope (d=1)")


def _run_convexity(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    mode = p["mode"]
    rep.note("mode", mode)
    tol = _tol(cfg)
    if mode in ("divbound", "weakaction"):
        rho = _grid(cfg, "rho")
        if mode == "divbound":
            b = div_bound(rho, _read_any(_need(cfg, "nu")), slack=p["slack"])
            _scope_note(rep, True)
            rep.add(Row("div_bound", b.computed, b.bound, b.tolerance))
        else:
            F = _functional(p["functional"], cfg)
            b = weak_action_bound(F, rho, slack=p["slack"])
            _scope_note(rep, b.in_scope)
            rep.add(Row("weak_action", b.computed, b.bound, b.tolerance))
        return
    F = _functional(p["functional"], cfg)
    lam = p["lam"] if p["lam"] is not None else F.lambda_geo
    if mode in ("geodesic", "mixture") and lam is None:
        raise UsageError("functional has no declared modulus; pass --lam")
    if mode == "geodesic":
        mu0, mu1 = _measure(cfg, "mu0"), _measure(cfg, "mu1")
        r = geodesic_convexity_residual(ConvexityCheck(F, lam, tolerance=tol), mu0, mu1)
        rep.note("sense", F.sense)
        rep.add(Row("geodesic_residual", r.worst, 0.0, tol))
    elif mode == "mixture":
        mu, mu0, mu1 = _measure(cfg, "mu"), _measure(cfg, "mu0"), _measure(cfg, "mu1")
        r = mixture_convexity_residual(F, lam, mu, mu0, mu1, p["h"], tolerance=tol, sense=F.sense)
        _scope_note(rep, r.in_scope)
        rep.add(Row("mixture_residual", r.worst, 0.0, tol))
    else:
        mu = _read_any(_need(cfg, "mu"))
        r = flat_derivative_convexity_check(F, mu, _segments(p["segments"]), tolerance=tol)
        _scope_note(rep, r.in_scope)
        for i, e in enumerate(r.excess):
            rep.add(Row(f"flat_midpoint[{i}]", e, 0.0, tol))


def _run_vv(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    if len(p["domain"]) != 2:
        raise UsageError("--domain needs two numbers a,b")
    prob = HjProblem1d(tuple(p["domain"]), p["grid"], terminal(p["terminal"]), Hamiltonian1d(p["hamiltonian"]), p["horizon"])
    runner = one_sided_semiconcave_rate if p["one_sided"] else rate_experiment
    r = runner(prob, p["eps"], p["t_probe"], check_refinement=p["refinement"])
    lo = p["slope_min"] if p["slope_min"] is not None else (0.85 if r.one_sided else 0.45)
    hi = p["slope_max"] if p["slope_max"] is not None else (1.15 if r.one_sided else 1.05)
    rep.note("status", r.status)
    rep.note("one_sided", r.one_sided)
    rep.note("constant_C", repr(r.constant))
    rep.note("slope_ci", repr(r.slope_ci))
    rep.note("floor", repr(r.floor))
    for e, err in zip(r.eps_list, r.errors):
        rep.add(Row(f"error[eps={e!r}]", err, r.constant * math.sqrt(e)))
    if r.refinement_change is not None:
        for e, ch in zip(r.eps_list, r.refinement_change):
            rep.add(Row.info(f"refinement_change[eps={e!r}]", ch))
    increase = max([b - a for a, b in zip(r.errors, r.errors[1:])] + [0.0])
    rep.add(Row("errors_monotone", increase, 3.0 * r.floor))
    if r.resolvable:
        rep.add(Row.at_least("slope>=min", r.slope, lo))
        rep.add(Row("slope<=max", r.slope, hi))


def _run_fenchel(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    g, xi = read_coupling(_need(cfg, "g")), read_coupling(_need(cfg, "xi"))
    L = _cost_model(p)
    gap = fenchel_gap(g, xi, L)
    rep.add(Row.at_least("fenchel_gap>=0", gap, 0.0, 1e-9))
    if p["expect_optimal"]:
        rep.add(Row("fenchel_gap_optimal", gap, 0.0, _tol(cfg)))


def _run_functional(cfg: RunConfig, rep: Report) -> None:
    p = cfg.params
    kind = p["kind"]
    if kind in ("entropy", "fisher", "entropy_star"):
        rho = _grid(cfg, "rho")
        value = {"entropy": entropy, "fisher": fisher_information, "entropy_star": entropy_star}[kind](rho)
    elif kind == "second_moment":
        src = cfg.path("rho") or cfg.path("mu")
        if src is None:
            raise UsageError("second_moment needs --rho or --mu")
        value = second_moment(_read_any(src))
    elif kind in ("relaxed_lagrangian", "relaxed_hamiltonian"):
        g = read_coupling(_need(cfg, "g"))
        L = _cost_model(p)
        value = relaxed_lagrangian(g, L) if kind == "relaxed_lagrangian" else relaxed_hamiltonian(g, L)
    else:
        raise UsageError(f"unknown functional kind {kind!r}")
    rep.add(Row.info(kind, value))
    if kind == "entropy_star":
        rep.add(Row.at_least("entropy_star>=0", value, 0.0, 1e-6))
    if p["expected"] is not None:
        rep.add(Row.close(f"{kind}_vs_expected", value, p["expected"], _tol(cfg) * max(1.0, abs(p["expected"]))))


RUNNERS = {
    "w2": _run_w2,
    "hopflax": _run_hopflax,
    "dpp-check": _run_dpp,
    "convexity-check": _run_convexity,
    "vv-rate": _run_vv,
    "fenchel-check": _run_fenchel,
    "functional": _run_functional,
}


def run(cfg: RunConfig) -> tuple[Report, int]:
    rep = Report(cfg.command, cfg.digest(), versions={"wasserhj": __version__, "numpy": np.__version__, "scipy": scipy.__version__})
    RUNNERS[cfg.command](cfg, rep)
    return rep, EXIT_OK if rep.all_passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    parser.add_argument("--config", default=S, help="flat key=value configuration file")
    parser.add_argument("--seed", default=S, help="seed of the random generator (64-bit)")
    parser.add_argument("--out", default=S, help="report path (stdout if absent)")
    parser.add_argument("--tol", default=S, help="tolerance override for the checks")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wasserhj", description="Wasserstein Hamilton-Jacobi laboratory")
    _global_flags(ap)
    sub = ap.add_subparsers(dest="command")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        _global_flags(sp)
        for key, (conv, _default) in SCHEMA[cmd].items():
            if cmd == "convexity-check" and key == "mode":
                sp.add_argument("mode", nargs="?", choices=CONVEXITY_MODES, default=argparse.SUPPRESS)
                continue
            flag = "--" + key.replace("_", "-")
            if conv.__name__ == "_bool":
                sp.add_argument(flag, dest=key, action="store_const", const=True, default=argparse.SUPPRESS)
            else:
                sp.add_argument(flag, dest=key, default=argparse.SUPPRESS)
    return ap


def parse_args(argv) -> RunConfig:
    ap = build_parser()
    ns = vars(ap.parse_args(argv))
    command = ns.pop("command", None)
    config_path = ns.pop("config", None)
    file_values, base = {}, Path.cwd()
    if config_path is not None:
        path = Path(config_path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        file_values = parse_config_text(text, str(path))
        base = path.resolve().parent
    return build_config(file_values, ns, command, base_dir=base)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0) and EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rep, code = run(cfg)
    except (OtSolverError, DegenerateDensityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        emit_report(rep, cfg.out)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return code


if __name__ == "__main__":
    raise SystemExit(main())
