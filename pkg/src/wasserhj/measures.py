"""Weighted point clouds: probability measures, couplings and their disintegrations.

Everything here is immutable.  Arrays are copied on construction and flagged
read-only so a measure can be shared freely between threads and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-12

__all__ = [
    "DiscreteMeasure",
    "Coupling",
    "FiberFamily",
    "merge_atoms",
    "read_measure",
    "write_measure",
    "read_coupling",
    "write_coupling",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _as_points(points, dim: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        # a flat list is a cloud of scalars unless dim says it is one point
        pts = pts.reshape(1, -1) if dim is not None and dim == pts.size and dim > 1 else pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
    return pts


def _check_weights(weights: np.ndarray, n: int) -> None:
    if weights.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {weights.shape}")
    if n < 1:
        raise ValueError("a measure needs at least one atom")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = float(weights.sum())
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights sum to {total!r}, not 1 (tolerance {WEIGHT_TOL})")


def _components(points: np.ndarray, tol: float) -> np.ndarray:
    """Label atoms closer than ``tol`` in the sup-norm, labels ordered by first occurrence."""
    n = len(points)
    parent = np.arange(n)
    if n > 1:
        pairs = cKDTree(points).query_pairs(r=tol, p=np.inf, output_type="ndarray")

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in pairs:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        for i in range(n):
            parent[i] = find(i)
    _, first, labels = np.unique(parent, return_index=True, return_inverse=True)
    # relabel so that label k is the k-th distinct atom in input order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[labels]


def merge_atoms(points: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL):
    """Merge atoms whose coordinates agree within ``tol``.

    The representative of each group is its first atom in input order, and
    groups are returned in order of first appearance, so the result is
    deterministic.  Returns ``(points, weights, labels)``.
    """
    labels = _components(points, tol)
    k = int(labels.max()) + 1
    merged_w = np.bincount(labels, weights=weights, minlength=k)
    first = np.full(k, len(points))
    np.minimum.at(first, labels, np.arange(len(points)))
    return points[first], merged_w, labels


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """A probability measure ``sum_i w_i delta_{x_i}`` on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None, *, normalize: bool = False):
        pts = _as_points(points)
        n = len(pts)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if normalize:
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("cannot normalize weights with negative entries or zero mass")
            w = w / w.sum()
        if pts.shape[1] < 1:
            raise ValueError("dimension must be positive")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        _check_weights(w, n)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"

    @classmethod
    def dirac(cls, x) -> "DiscreteMeasure":
        return cls(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        return cls(points)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def second_moment(self) -> float:
        return float(self.weights @ np.einsum("ij,ij->i", self.points, self.points))

    def translate(self, c) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + np.asarray(c, dtype=float), self.weights)

    def merged(self, tol: float = MERGE_TOL, drop_zero: bool = True) -> "DiscreteMeasure":
        """Equivalent measure with coincident atoms merged and null atoms dropped."""
        keep = self.weights > 0 if drop_zero else np.ones(self.n, dtype=bool)
        pts, w, _ = merge_atoms(self.points[keep], self.weights[keep], tol)
        return DiscreteMeasure(pts, w / w.sum())

    def mixture(self, other: "DiscreteMeasure", h: float) -> "DiscreteMeasure":
        """The flat interpolation ``(1-h) self + h other`` (atoms concatenated, not merged)."""
        if not 0.0 <= h <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {h}")
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        pts = np.vstack([self.points, other.points])
        w = np.concatenate([(1.0 - h) * self.weights, h * other.weights])
        keep = w > 0
        return DiscreteMeasure(pts[keep], w[keep], normalize=True)

    def allclose(self, other: "DiscreteMeasure", atol: float = 1e-9) -> bool:
        """Equality as measures, up to merging atoms and a coordinate/weight tolerance."""
        if self.dim != other.dim:
            return False
        a, b = self.merged(atol), other.merged(atol)
        if a.n != b.n:
            return False
        dist, idx = cKDTree(b.points).query(a.points, p=np.inf)
        if np.any(dist > atol) or len(set(idx.tolist())) != a.n:
            return False
        return bool(np.all(np.abs(a.weights - b.weights[idx]) <= atol))


@dataclass(frozen=True, eq=False)
class Coupling:
    """A probability measure on R^d x R^d stored as weighted pairs ``(x_i, y_i)``.

    Used for transport plans, for velocity plans (second entry read as a
    tangent vector at ``x``) and for adjoint plans (second entry read as a
    momentum).
    """

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray

    def __init__(self, x, y, weights=None, *, normalize: bool = False):
        xs, ys = _as_points(x), _as_points(y)
        if xs.shape != ys.shape:
            raise ValueError(f"pair arrays differ in shape: {xs.shape} vs {ys.shape}")
        n = len(xs)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if normalize:
            w = w / w.sum()
        _check_weights(w, n)
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("pairs must be finite")
        object.__setattr__(self, "x", _frozen(xs))
        object.__setattr__(self, "y", _frozen(ys))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Coupling(pairs={self.n}, dim={self.dim})"

    # constructors -----------------------------------------------------
    @classmethod
    def from_map(cls, mu: DiscreteMeasure, values) -> "Coupling":
        """``(Id x f)#mu`` given the values ``f(x_i)`` at the atoms of ``mu``."""
        v = np.asarray(values, dtype=float)
        v = np.broadcast_to(v.reshape(-1, mu.dim) if v.size != mu.dim else v.reshape(1, mu.dim), mu.points.shape)
        return cls(mu.points, v, mu.weights)

    @classmethod
    def constant(cls, mu: DiscreteMeasure, c) -> "Coupling":
        return cls.from_map(mu, np.broadcast_to(np.asarray(c, dtype=float).reshape(1, -1), mu.points.shape))

    @classmethod
    def zero(cls, mu: DiscreteMeasure) -> "Coupling":
        """The null velocity plan ``mu (x) delta_0``."""
        return cls(mu.points, np.zeros_like(mu.points), mu.weights)

    @classmethod
    def identity(cls, mu: DiscreteMeasure) -> "Coupling":
        return cls(mu.points, mu.points, mu.weights)

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "Coupling":
        if mu.dim != nu.dim:
            raise ValueError("dimension mismatch")
        i, j = np.meshgrid(np.arange(mu.n), np.arange(nu.n), indexing="ij")
        return cls(mu.points[i.ravel()], nu.points[j.ravel()], np.outer(mu.weights, nu.weights).ravel(), normalize=True)

    @classmethod
    def from_matrix(cls, mu: DiscreteMeasure, nu: DiscreteMeasure, plan: np.ndarray, threshold: float = 0.0) -> "Coupling":
        """Sparse coupling from a dense plan matrix, rows over ``mu`` and columns over ``nu``.

        Entries ``<= threshold`` are dropped; pairs are listed row-major so the
        pair order follows the atom order of ``mu``.
        """
        i, j = np.nonzero(plan > threshold)
        w = plan[i, j]
        return cls(mu.points[i], nu.points[j], w, normalize=True)

    # views -------------------------------------------------------------
    @property
    def first_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.x, self.weights).merged()

    @property
    def second_marginal(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.y, self.weights).merged()

    def swap(self) -> "Coupling":
        return Coupling(self.y, self.x, self.weights)

    def canonical(self, tol: float = MERGE_TOL) -> "Coupling":
        """Merge coincident pairs and drop null ones."""
        keep = self.weights > 0
        xy = np.hstack([self.x[keep], self.y[keep]])
        pts, w, _ = merge_atoms(xy, self.weights[keep], tol)
        d = self.dim
        return Coupling(pts[:, :d], pts[:, d:], w / w.sum())

    def allclose(self, other: "Coupling", atol: float = 1e-9) -> bool:
        if self.dim != other.dim:
            return False
        a = DiscreteMeasure(np.hstack([self.x, self.y]), self.weights)
        b = DiscreteMeasure(np.hstack([other.x, other.y]), other.weights)
        return a.allclose(b, atol)

    def fibers(self, tol: float = MERGE_TOL) -> "FiberFamily":
        """Disintegrate with respect to the first marginal."""
        base_pts, base_w, labels = merge_atoms(self.x, self.weights, tol)
        fibers = []
        for k in range(len(base_pts)):
            sel = labels == k
            w = self.weights[sel]
            mass = w.sum()
            if mass <= 0:
                # null base atom: any fiber will do, keep the listed points evenly
                w = np.full(sel.sum(), 1.0 / sel.sum())
                mass = 1.0
            fibers.append((np.array(self.y[sel]), w / mass))
        keep = base_w > 0
        base = DiscreteMeasure(base_pts[keep], base_w[keep] / base_w[keep].sum())
        return FiberFamily(base, tuple(f for f, k in zip(fibers, keep) if k))


@dataclass(frozen=True)
class FiberFamily:
    """A base measure together with one conditional distribution per base atom."""

    base: DiscreteMeasure
    fibers: tuple

    def __post_init__(self):
        if len(self.fibers) != self.base.n:
            raise ValueError("one fiber per base atom is required")
        for pts, w in self.fibers:
            if abs(float(np.sum(w)) - 1.0) > WEIGHT_TOL or np.any(np.asarray(w) < 0):
                raise ValueError("every fiber must be a probability vector")
            if np.asarray(pts).shape[1] != self.base.dim:
                raise ValueError("fiber dimension differs from base dimension")

    def recombine(self) -> Coupling:
        xs, ys, ws = [], [], []
        for x, wx, (pts, w) in zip(self.base.points, self.base.weights, self.fibers):
            xs.append(np.repeat(x[None, :], len(pts), axis=0))
            ys.append(pts)
            ws.append(wx * np.asarray(w))
        return Coupling(np.vstack(xs), np.vstack(ys), np.concatenate(ws), normalize=True)


# ---------------------------------------------------------------------------
# text file formats
# ---------------------------------------------------------------------------


def _parse_header(line: str, expected: Sequence[str], path) -> dict:
    fields = {}
    for tok in line.split():
        if "=" not in tok:
            raise ValueError(f"{path}: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    missing = [k for k in expected if k not in fields]
    if missing:
        raise ValueError(f"{path}: header lacks {', '.join(missing)}")
    return fields


def _data_lines(text: str) -> list[str]:
    return [ln for ln in (s.strip() for s in text.splitlines()) if ln and not ln.startswith("#")]


def _fmt(v: float) -> str:
    return repr(float(v))


def read_measure(path) -> DiscreteMeasure:
    """Read ``dim=<d> atoms=<n>`` followed by ``n`` lines ``w x1 .. xd``."""
    lines = _data_lines(Path(path).read_text())
    if not lines:
        raise ValueError(f"{path}: empty measure file")
    head = _parse_header(lines[0], ("dim", "atoms"), path)
    d, n = int(head["dim"]), int(head["atoms"])
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != n:
        raise ValueError(f"{path}: header announces {n} atoms, found {len(rows)}")
    if any(len(r) != d + 1 for r in rows):
        raise ValueError(f"{path}: every atom line needs 1 + {d} numbers")
    arr = np.array(rows, dtype=float).reshape(n, d + 1)
    return DiscreteMeasure(arr[:, 1:], arr[:, 0])


def write_measure(path, mu: DiscreteMeasure) -> None:
    out = [f"dim={mu.dim} atoms={mu.n}"]
    for w, x in zip(mu.weights, mu.points):
        out.append(" ".join([_fmt(w), *map(_fmt, x)]))
    Path(path).write_text("\n".join(out) + "\n")


def read_coupling(path) -> Coupling:
    """Read ``dim=<d> pairs=<n>`` followed by ``n`` lines ``w x1..xd y1..yd``."""
    lines = _data_lines(Path(path).read_text())
    if not lines:
        raise ValueError(f"{path}: empty coupling file")
    head = _parse_header(lines[0], ("dim", "pairs"), path)
    d, n = int(head["dim"]), int(head["pairs"])
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != n:
        raise ValueError(f"{path}: header announces {n} pairs, found {len(rows)}")
    if any(len(r) != 2 * d + 1 for r in rows):
        raise ValueError(f"{path}: every pair line needs 1 + 2*{d} numbers")
    arr = np.array(rows, dtype=float).reshape(n, 2 * d + 1)
    return Coupling(arr[:, 1 : d + 1], arr[:, d + 1 :], arr[:, 0])


def write_coupling(path, plan: Coupling) -> None:
    out = [f"dim={plan.dim} pairs={plan.n}"]
    for w, x, y in zip(plan.weights, plan.x, plan.y):
        out.append(" ".join([_fmt(w), *map(_fmt, x), *map(_fmt, y)]))
    Path(path).write_text("\n".join(out) + "\n")
