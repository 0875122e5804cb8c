"""Reproducible fixture corpus: small point clouds, Gaussian grids and files for the CLI.

``python3 -m wasserhj.fixtures DIR`` writes the file corpus into ``DIR``.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

from .grid import GridDensity, write_grid
from .measures import Coupling, DiscreteMeasure, write_coupling, write_measure

__all__ = [
    "random_cloud",
    "small_ot_instances",
    "quantile_gaussian_1d",
    "gaussian_cloud",
    "bures_w2",
    "random_velocity_plan",
    "grid_corpus",
    "write_corpus",
]


def random_cloud(rng: np.random.Generator, n: int, d: int, scale: float = 1.0, shift=0.0, weighted: bool = False) -> DiscreteMeasure:
    pts = scale * rng.standard_normal((n, d)) + np.asarray(shift, dtype=float)
    w = rng.uniform(0.2, 1.0, n) if weighted else None
    return DiscreteMeasure(pts, w, normalize=weighted)


def small_ot_instances(seed: int = 0, count: int = 40, max_atoms: int = 6) -> list[tuple[DiscreteMeasure, DiscreteMeasure]]:
    """Equal-size, equal-weight pairs with 1 to ``max_atoms`` atoms in dimensions 1 to 3."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(1, max_atoms + 1))
        d = int(rng.integers(1, 4))
        out.append((random_cloud(rng, n, d), random_cloud(rng, n, d, scale=1.5, shift=rng.normal(size=d))))
    return out


def quantile_gaussian_1d(mean: float, sigma: float, n: int) -> DiscreteMeasure:
    """``n`` equal-weight atoms at the mid-quantiles ``(i + 1/2) / n`` of ``N(mean, sigma^2)``."""
    q = (np.arange(n) + 0.5) / n
    return DiscreteMeasure((mean + sigma * norm.ppf(q)).reshape(-1, 1))


def gaussian_cloud(mean, cov, n: int, seed: int = 0) -> DiscreteMeasure:
    """Equal-weight quasi-random sample of ``N(mean, cov)`` (scrambled Sobol points through the normal quantile)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = len(mean)
    u = qmc.Sobol(d, scramble=True, seed=seed).random(n)
    z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    A = np.linalg.cholesky(np.atleast_2d(np.asarray(cov, dtype=float)))
    return DiscreteMeasure(mean + z @ A.T)


def bures_w2(m0, S0, m1, S1) -> float:
    """Closed-form W2 between Gaussians: ``|m0 - m1|^2 + tr(S0 + S1 - 2 (S0^1/2 S1 S0^1/2)^1/2)``."""
    from scipy.linalg import sqrtm

    m0, m1 = np.atleast_1d(m0).astype(float), np.atleast_1d(m1).astype(float)
    S0, S1 = np.atleast_2d(S0).astype(float), np.atleast_2d(S1).astype(float)
    r0 = np.real(sqrtm(S0))
    cross = np.real(sqrtm(r0 @ S1 @ r0))
    val = float(np.sum((m0 - m1) ** 2) + np.trace(S0 + S1 - 2.0 * cross))
    return math.sqrt(max(val, 0.0))


def random_velocity_plan(rng: np.random.Generator, n_base: int, d: int, max_fiber: int = 3, scale: float = 1.0) -> Coupling:
    """Velocity plan over ``n_base`` random base points, each with 1 to ``max_fiber`` velocities."""
    base = rng.standard_normal((n_base, d))
    xs, vs, ws = [], [], []
    for i in range(n_base):
        k = int(rng.integers(1, max_fiber + 1))
        w = rng.uniform(0.2, 1.0, k)
        for j in range(k):
            xs.append(base[i])
            vs.append(scale * rng.standard_normal(d))
            ws.append(w[j])
    return Coupling(np.array(xs), np.array(vs), np.array(ws), normalize=True)


def grid_corpus(seed: int = 0) -> list[GridDensity]:
    """Gaussians and Gaussian mixtures on 1-D and 2-D grids."""
    rng = np.random.default_rng(seed)
    out = [
        GridDensity.gaussian([0.0], 1.0, 512),
        GridDensity.gaussian([0.5], 0.5, 512),
        GridDensity.gaussian([0.0, 0.0], 1.0, 48),
        GridDensity.gaussian([1.0, -0.5], 0.7, 40),
        GridDensity.uniform_box([0.0], [1.0], 256),
    ]
    for d in (1, 2):
        for _ in range(3):
            k = int(rng.integers(2, 4))
            means = rng.uniform(-1.5, 1.5, (k, d))
            sig = rng.uniform(0.4, 0.9, k)
            w = rng.uniform(0.3, 1.0, k)
            lo, hi = means.min(0) - 5 * sig.max(), means.max(0) + 5 * sig.max()
            shape = 400 if d == 1 else 40
            out.append(GridDensity.gaussian_mixture(means, sig, w / w.sum(), lo, hi, (shape,) * d))
    return out


def write_corpus(directory) -> list[Path]:
    """Files used by the CLI examples and end-to-end tests."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    files = {}
    files["dirac_00.txt"] = DiscreteMeasure.dirac([0.0, 0.0])
    files["dirac_34.txt"] = DiscreteMeasure.dirac([3.0, 4.0])
    files["dirac_2.txt"] = DiscreteMeasure.dirac([2.0])
    files["cloud_a.txt"] = random_cloud(rng, 6, 2)
    files["cloud_b.txt"] = random_cloud(rng, 6, 2, shift=[1.0, 0.5])
    files["cloud_c.txt"] = random_cloud(rng, 5, 2, scale=0.8)
    files["grid_support.txt"] = DiscreteMeasure.uniform(np.array([[x, y] for x in range(3) for y in range(3)], dtype=float))
    written = []
    for name, m in files.items():
        write_measure(d / name, m)
        written.append(d / name)
    grids = {
        "gauss_1d.grid": GridDensity.gaussian([0.0], 1.0, 512),
        "gauss_1d_sigma2.grid": GridDensity.gaussian([0.0], 2.0, 512),
        "gauss_2d.grid": GridDensity.gaussian([0.0, 0.0], 1.0, 40),
        "gauss_2d_shift.grid": GridDensity.gaussian([1.0, 0.5], 1.0, 40),
    }
    for name, g in grids.items():
        write_grid(d / name, g)
        written.append(d / name)
    base = files["cloud_a.txt"]
    p = rng.standard_normal((base.n, 2))
    g = Coupling.from_map(base, p)
    write_coupling(d / "plan_g.txt", g)
    write_coupling(d / "plan_xi.txt", Coupling.from_map(base, -p))
    written += [d / "plan_g.txt", d / "plan_xi.txt"]
    return written


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="write the fixture file corpus")
    ap.add_argument("directory")
    args = ap.parse_args(argv)
    for p in write_corpus(args.directory):
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
