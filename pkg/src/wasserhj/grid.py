"""Densities sampled on regular 1-D and 2-D grids."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import DiscreteMeasure

__all__ = ["GridDensity", "DegenerateDensityError", "read_grid", "write_grid", "DENSITY_FLOOR"]

# cells below this fraction of the peak are left out of log/Fisher integrands
DENSITY_FLOOR = 1e-12


class DegenerateDensityError(ValueError):
    """The density has no usable support above the floor."""


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative values at the nodes ``origin + i * spacing`` of a regular grid.

    Values are renormalized on construction so that the Riemann sum
    ``sum(values) * cell_volume`` equals one.
    """

    origin: tuple
    spacing: tuple
    values: np.ndarray

    def __init__(self, origin, spacing, values):
        vals = np.array(values, dtype=float)
        if vals.ndim not in (1, 2):
            raise ValueError("only 1-D and 2-D grids are supported")
        origin = tuple(float(o) for o in np.atleast_1d(origin))
        spacing = tuple(float(h) for h in np.atleast_1d(spacing))
        if len(origin) != vals.ndim or len(spacing) != vals.ndim:
            raise ValueError("origin and spacing need one entry per axis")
        if any(h <= 0 for h in spacing):
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("density values must be finite and nonnegative")
        mass = vals.sum() * float(np.prod(spacing))
        if mass <= 0:
            raise DegenerateDensityError("density has zero mass")
        vals = vals / mass
        vals.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", vals)

    # constructors -----------------------------------------------------
    @classmethod
    def from_function(cls, f, lower, upper, shape) -> "GridDensity":
        """Sample ``f`` (taking an ``(n, d)`` array of points) at cell centers of a box."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(np.atleast_1d(shape).astype(int))
        spacing = (upper - lower) / np.asarray(shape)
        origin = lower + 0.5 * spacing
        axes = [origin[k] + spacing[k] * np.arange(shape[k]) for k in range(len(shape))]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray(f(pts), dtype=float).reshape(shape)
        return cls(origin, spacing, vals)

    @classmethod
    def gaussian(cls, mean, sigma, n, width: float = 8.0) -> "GridDensity":
        """Isotropic ``N(mean, sigma^2 I)`` on a box of half-width ``width * sigma``.

        ``width = 8`` leaves a tail mass far below ``1e-4`` outside the box.
        """
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = len(mean)
        shape = (n,) * d if np.isscalar(n) else tuple(n)
        lo, hi = mean - width * sigma, mean + width * sigma

        def pdf(x):
            r2 = np.sum((x - mean) ** 2, axis=1)
            return np.exp(-0.5 * r2 / sigma**2)

        return cls.from_function(pdf, lo, hi, shape)

    @classmethod
    def gaussian_mixture(cls, means, sigmas, weights, lower, upper, shape) -> "GridDensity":
        means = np.atleast_2d(np.asarray(means, dtype=float))
        d = means.shape[1]

        def pdf(x):
            out = np.zeros(len(x))
            for m, s, w in zip(means, sigmas, weights):
                r2 = np.sum((x - m) ** 2, axis=1)
                out += w * np.exp(-0.5 * r2 / s**2) / (2 * np.pi * s**2) ** (d / 2)
            return out

        return cls.from_function(pdf, lower, upper, shape)

    @classmethod
    def uniform_box(cls, lower, upper, n) -> "GridDensity":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        shape = (n,) * len(lower) if np.isscalar(n) else tuple(n)
        return cls.from_function(lambda x: np.ones(len(x)), lower, upper, shape)

    # geometry ----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [self.origin[k] + self.spacing[k] * np.arange(self.shape[k]) for k in range(self.dim)]

    def nodes(self) -> np.ndarray:
        """Node coordinates as an ``(N, d)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def translate(self, c) -> "GridDensity":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return GridDensity(tuple(np.asarray(self.origin) + c), self.spacing, self.values)

    def support_mask(self, floor: float = DENSITY_FLOOR) -> np.ndarray:
        return self.values > floor * self.values.max()

    def gradient(self) -> np.ndarray:
        """Second-order central differences inside, second-order one-sided at the edges.

        Shape ``(d,) + grid shape``.
        """
        if min(self.shape) < 3:
            raise DegenerateDensityError("need at least three nodes per axis for a gradient")
        g = np.gradient(self.values, *self.spacing, edge_order=2)
        return np.stack(g if self.dim > 1 else [g])

    def grad_log(self, floor: float = DENSITY_FLOOR) -> np.ndarray:
        """``grad rho / rho`` on the support, zero elsewhere."""
        mask = self.support_mask(floor)
        grad = self.gradient()
        out = np.zeros_like(grad)
        out[:, mask] = grad[:, mask] / self.values[mask]
        return out

    def contains(self, x, floor: float = DENSITY_FLOOR) -> bool:
        """Whether ``x`` lies in the grid box and its nearest node carries density above the floor."""
        x = np.asarray(x, dtype=float).reshape(-1)
        idx = np.rint((x - np.asarray(self.origin)) / np.asarray(self.spacing)).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            return False
        return bool(self.support_mask(floor)[tuple(idx)])

    def atomize(self, floor: float = DENSITY_FLOOR) -> DiscreteMeasure:
        """Cell-center atoms carrying cell masses; cells below the floor are dropped."""
        mask = self.support_mask(floor).ravel()
        mass = self.values.ravel()[mask] * self.cell_volume
        return DiscreteMeasure(self.nodes()[mask], mass, normalize=True)

    def riemann(self, f_values: np.ndarray) -> float:
        """``int f rho dx`` for ``f`` given at the nodes."""
        return float(np.sum(np.asarray(f_values).reshape(self.shape) * self.values) * self.cell_volume)


def read_grid(path) -> GridDensity:
    """Read ``dim=<d> n=<n1>[x<n2>] origin=<..> spacing=<..>`` then row-major values.

    Multi-axis origin and spacing are comma separated.
    """
    text = [ln.strip() for ln in Path(path).read_text().splitlines()]
    text = [ln for ln in text if ln and not ln.startswith("#")]
    if not text:
        raise ValueError(f"{path}: empty grid file")
    head = {}
    for tok in text[0].split():
        if "=" not in tok:
            raise ValueError(f"{path}: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        head[k] = v
    for key in ("dim", "n", "origin", "spacing"):
        if key not in head:
            raise ValueError(f"{path}: header lacks {key}")
    d = int(head["dim"])
    shape = tuple(int(s) for s in head["n"].split("x"))
    origin = [float(s) for s in head["origin"].split(",")]
    spacing = [float(s) for s in head["spacing"].split(",")]
    if len(shape) != d:
        raise ValueError(f"{path}: n={head['n']} does not match dim={d}")
    vals = np.array(" ".join(text[1:]).split(), dtype=float)
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {vals.size}")
    return GridDensity(origin, spacing, vals.reshape(shape))


def write_grid(path, rho: GridDensity) -> None:
    head = "dim={} n={} origin={} spacing={}".format(
        rho.dim,
        "x".join(str(s) for s in rho.shape),
        ",".join(repr(o) for o in rho.origin),
        ",".join(repr(h) for h in rho.spacing),
    )
    rows = [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(rho.values)]
    Path(path).write_text(head + "\n" + "\n".join(rows) + "\n")
