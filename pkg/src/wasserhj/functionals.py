"""Functionals on measures, Lagrangian/Hamiltonian families and their relaxations.

A Lagrangian ``L`` is paired with the Hamiltonian ``H(p) = sup_v <-v, p> - L(v)``.
Relaxed versions integrate ``L`` (resp. ``H``) against a velocity (resp.
momentum) plan; see :func:`relaxed_lagrangian` and :func:`relaxed_hamiltonian`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .grid import DENSITY_FLOOR, DegenerateDensityError, GridDensity
from .measures import Coupling, DiscreteMeasure
from .ot_core import barycentric_projection, scale_velocity_plan, tangent_scalar_product, w2

Measure = Union[DiscreteMeasure, GridDensity]

__all__ = [
    "CostModel",
    "ConjugateUnavailableError",
    "UnsupportedFunctionalError",
    "FunctionalSpec",
    "legendre",
    "second_moment",
    "entropy",
    "fisher_information",
    "entropy_star",
    "relaxed_lagrangian",
    "relaxed_hamiltonian",
    "fenchel_gap",
    "flat_derivative_numeric",
]


class ConjugateUnavailableError(ValueError):
    """A tabulated Lagrangian has neither conjugate data nor a conjugation grid."""


class UnsupportedFunctionalError(ValueError):
    """The functional cannot be evaluated on this kind of measure."""


# ---------------------------------------------------------------------------
# scalar functionals
# ---------------------------------------------------------------------------


def second_moment(mu: Measure) -> float:
    if isinstance(mu, GridDensity):
        r2 = np.sum(mu.nodes() ** 2, axis=1)
        return mu.riemann(r2)
    return mu.second_moment()


def entropy(rho: GridDensity, floor: float = DENSITY_FLOOR) -> float:
    """Riemann sum of ``rho log rho`` with ``0 log 0 = 0``."""
    if not isinstance(rho, GridDensity):
        raise UnsupportedFunctionalError("entropy is only defined for densities")
    mask = rho.support_mask(floor)
    v = rho.values[mask]
    return float(np.sum(v * np.log(v)) * rho.cell_volume)


def fisher_information(rho: GridDensity, floor: float = DENSITY_FLOOR) -> float:
    """Riemann sum of ``|grad rho|^2 / rho`` over cells above the floor."""
    mask = rho.support_mask(floor)
    if mask.sum() < 3 ** rho.dim:
        raise DegenerateDensityError("density is below the floor almost everywhere")
    grad = rho.gradient()
    g2 = np.sum(grad**2, axis=0)
    return float(np.sum(g2[mask] / rho.values[mask]) * rho.cell_volume)


def entropy_star(rho: GridDensity) -> float:
    """``entropy + pi * second moment``, nonnegative for every density with finite moment."""
    return entropy(rho) + math.pi * second_moment(rho)


# ---------------------------------------------------------------------------
# Lagrangian / Hamiltonian families
# ---------------------------------------------------------------------------


def legendre(values: np.ndarray, grid: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Discrete transform ``q -> max_k (-grid_k q - values_k)`` on a 1-D grid."""
    q = np.asarray(query, dtype=float).reshape(-1)
    return np.max(-np.outer(q, grid) - values[None, :], axis=1)


def _norms(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim <= 1:
        return np.abs(z).reshape(-1)
    return np.sqrt(np.einsum("ij,ij->i", z, z))


@dataclass(frozen=True)
class CostModel:
    """A convex superlinear Lagrangian with ``L(0) = 0`` and its Hamiltonian.

    Families:

    * ``quadratic``: ``L(z) = a |z|^2 / 2``, ``H(p) = |p|^2 / (2a)``.
    * ``power``: ``L(z) = |z|^p / p`` for ``1 < p <= 2``, ``H(q) = |q|^p' / p'``.
    * ``tabulated``: piecewise linear ``L`` on a 1-D velocity grid, ``+inf``
      outside it.  ``H`` comes from an explicit table or, if
      ``numeric_conjugation`` is set, from the exact transform of the table.

    ``coercivity`` returns ``(c, C)`` with ``L(z) >= c |z|^2 - C``.  For
    ``p < 2`` no such global bound exists; the constants hold on the ball
    ``|z| <= coercivity_radius`` instead.
    """

    family: str
    a: float = 1.0
    p: float = 2.0
    table_z: tuple | None = None
    table_L: tuple | None = None
    table_p: tuple | None = None
    table_H: tuple | None = None
    numeric_conjugation: bool = False
    coercivity_radius: float = math.inf
    conjugate_samples: int = 2048

    def __post_init__(self):
        if self.family == "quadratic":
            if self.a <= 0:
                raise ValueError("quadratic Lagrangian needs a > 0")
        elif self.family == "power":
            if not 1.0 < self.p <= 2.0:
                raise ValueError("power Lagrangian needs 1 < p <= 2")
            if self.p < 2.0 and not math.isfinite(self.coercivity_radius):
                object.__setattr__(self, "coercivity_radius", 10.0)
        elif self.family == "tabulated":
            z = np.asarray(self.table_z, dtype=float)
            L = np.asarray(self.table_L, dtype=float)
            if z.ndim != 1 or z.shape != L.shape or len(z) < 3:
                raise ValueError("tabulated Lagrangian needs matching 1-D grids of length >= 3")
            if np.any(np.diff(z) <= 0):
                raise ValueError("tabulated velocity grid must be strictly increasing")
            zero = np.flatnonzero(np.abs(z) < 1e-14)
            if len(zero) != 1 or abs(L[zero[0]]) > 1e-14:
                raise ValueError("tabulated Lagrangian must contain the node 0 with L(0) = 0")
            slopes = np.diff(L) / np.diff(z)
            if np.any(np.diff(slopes) < -1e-12):
                raise ValueError("tabulated Lagrangian is not convex")
            if self.table_H is not None and (self.table_p is None or len(self.table_p) != len(self.table_H)):
                raise ValueError("conjugate table needs matching momentum and value grids")
        else:
            raise ValueError(f"unknown Lagrangian family {self.family!r}")

    # constructors
    @classmethod
    def quadratic(cls, a: float = 1.0) -> "CostModel":
        return cls("quadratic", a=a)

    @classmethod
    def power(cls, p: float, radius: float = 10.0) -> "CostModel":
        return cls("power", p=p, coercivity_radius=radius if p < 2 else math.inf)

    @classmethod
    def tabulated(cls, z, L, p=None, H=None, numeric_conjugation: bool = False) -> "CostModel":
        return cls(
            "tabulated",
            table_z=tuple(np.asarray(z, dtype=float)),
            table_L=tuple(np.asarray(L, dtype=float)),
            table_p=None if p is None else tuple(np.asarray(p, dtype=float)),
            table_H=None if H is None else tuple(np.asarray(H, dtype=float)),
            numeric_conjugation=numeric_conjugation,
        )

    @property
    def name(self) -> str:
        if self.family == "quadratic":
            return f"quadratic(a={self.a!r})"
        if self.family == "power":
            return f"power(p={self.p!r})"
        return f"tabulated({len(self.table_z)} nodes)"

    @property
    def has_conjugate(self) -> bool:
        return self.family != "tabulated" or self.table_H is not None or self.numeric_conjugation

    @property
    def conjugate_exponent(self) -> float:
        return self.p / (self.p - 1.0)

    # evaluation
    def lagrangian(self, z) -> np.ndarray:
        if self.family == "tabulated":
            zz = np.asarray(z, dtype=float)
            if zz.ndim == 2 and zz.shape[1] != 1:
                raise ValueError("tabulated Lagrangians are one-dimensional")
            zz = zz.reshape(-1)
            tz, tl = np.asarray(self.table_z), np.asarray(self.table_L)
            out = np.interp(zz, tz, tl)
            out[(zz < tz[0] - 1e-14) | (zz > tz[-1] + 1e-14)] = np.inf
            return out
        r = _norms(z)
        if self.family == "quadratic":
            return 0.5 * self.a * r**2
        return r**self.p / self.p

    def lagrangian_grad(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        z2 = z.reshape(len(z), -1) if z.ndim > 1 else z.reshape(-1, 1)
        if self.family == "quadratic":
            return self.a * z2
        if self.family == "power":
            r = _norms(z2)
            with np.errstate(divide="ignore", invalid="ignore"):
                fac = np.where(r > 0, r ** (self.p - 2.0), 0.0)
            return fac[:, None] * z2
        tz, tl = np.asarray(self.table_z), np.asarray(self.table_L)
        slopes = np.diff(tl) / np.diff(tz)
        k = np.clip(np.searchsorted(tz, z2[:, 0], side="right") - 1, 0, len(slopes) - 1)
        return slopes[k][:, None]

    def hamiltonian(self, p) -> np.ndarray:
        """``H(p) = sup_v <-v, p> - L(v)``, one value per row of ``p``."""
        if self.family == "quadratic":
            return _norms(p) ** 2 / (2.0 * self.a)
        if self.family == "power":
            q = self.conjugate_exponent
            return _norms(p) ** q / q
        pp = np.asarray(p, dtype=float).reshape(-1)
        if self.table_H is not None:
            return np.interp(pp, np.asarray(self.table_p), np.asarray(self.table_H))
        if self.numeric_conjugation:
            return legendre(np.asarray(self.table_L), np.asarray(self.table_z), pp)
        raise ConjugateUnavailableError("tabulated Lagrangian has no conjugate data and numeric conjugation is off")

    def coercivity(self) -> tuple[float, float]:
        if self.family == "quadratic":
            # the tight bound has no offset; the assumption asks for a positive one
            return 0.5 * self.a, 1e-12
        if self.family == "power":
            if self.p == 2.0:
                return 0.5, 1e-12
            return self.coercivity_radius ** (self.p - 2.0) / self.p, 1e-12
        tz, tl = np.asarray(self.table_z), np.asarray(self.table_L)
        C = 1.0 + max(0.0, -float(tl.min()))
        nz = np.abs(tz) > 0
        return float(np.min((tl[nz] + C) / tz[nz] ** 2)), C

    def numeric_hamiltonian(self, p) -> np.ndarray:
        """``H`` by brute-force maximization over a radial velocity grid.

        The grid half-width ``R`` is a root beyond which
        ``-v p - L(v) < 0 = -L(0)``, so the supremum is attained inside.
        """
        r = _norms(p)
        c, C = self.coercivity()
        out = np.empty(len(r))
        for i, ri in enumerate(r):
            R = 1.05 * (ri + math.sqrt(ri * ri + 4.0 * c * C)) / (2.0 * c)
            if self.family == "power" and self.p < 2.0:
                # c, C only hold on a ball; use the root of |v|^(p-1) = p r instead
                R = 1.05 * max((self.p * ri) ** (1.0 / (self.p - 1.0)), 1e-12)
            if self.family == "tabulated":
                tz = np.asarray(self.table_z)
                R = max(abs(tz[0]), abs(tz[-1]))
            s = np.linspace(-R, R, self.conjugate_samples)
            vals = s * ri - self.lagrangian(np.abs(s) if self.family != "tabulated" else s)
            out[i] = np.max(vals)
        return out


def relaxed_lagrangian(g: Coupling, L: CostModel) -> float:
    """``int L(v) dg(x, v)``."""
    return float(g.weights @ L.lagrangian(g.y if g.dim > 1 else g.y[:, 0]))


HamiltonianFn = Callable[[np.ndarray, np.ndarray, DiscreteMeasure], np.ndarray]


def relaxed_hamiltonian(g: Coupling, H: Union[CostModel, HamiltonianFn]) -> float:
    """``int H(x, p, mu) dg(x, p)`` with ``mu`` the first marginal of ``g``.

    ``H`` is either a :class:`CostModel` (momentum-only Hamiltonian obtained
    by conjugation) or a vectorized callable ``H(x, p, mu)``.
    """
    if isinstance(H, CostModel):
        vals = H.hamiltonian(g.y if g.dim > 1 else g.y[:, 0])
    else:
        vals = np.asarray(H(g.x, g.y, g.first_marginal), dtype=float)
    return float(g.weights @ vals)


def fenchel_gap(g: Coupling, xi: Coupling, L: CostModel) -> float:
    """``H(g) + L(xi) - <-xi, g>``: nonnegative, zero exactly at Fenchel-optimal pairs."""
    return relaxed_hamiltonian(g, L) + relaxed_lagrangian(xi, L) - tangent_scalar_product(scale_velocity_plan(-1.0, xi), g)


# ---------------------------------------------------------------------------
# functionals on measures
# ---------------------------------------------------------------------------

_KINDS = ("potential", "interaction", "second_moment", "entropy", "half_w2_to", "neg_half_w2_to", "constant")


@dataclass(frozen=True)
class FunctionalSpec:
    """A functional on probability measures plus what is known about it.

    ``lambda_geo`` is the declared geodesic modulus; ``sense`` says whether it
    is a convexity (``F`` is ``lambda``-convex) or a concavity modulus.
    ``lipschitz`` is ``Lip(F; W2)`` when known and ``lower_bound`` a lower
    bound of ``F``.  ``scale`` multiplies the whole functional.
    """

    kind: str
    lambda_geo: float | None = None
    sense: str = "convex"
    V: Callable | None = None
    grad_V: Callable | None = None
    laplacian_V: Callable | None = None
    W: Callable | None = None
    grad_W: Callable | None = None
    anchor: object = None
    scale: float = 1.0
    constant: float = 0.0
    lipschitz: float | None = None
    lower_bound: float | None = None
    name: str = field(default="")

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.sense not in ("convex", "concave"):
            raise ValueError("sense must be 'convex' or 'concave'")
        if self.kind == "potential" and self.V is None:
            raise ValueError("potential functional needs V")
        if self.kind == "interaction" and self.W is None:
            raise ValueError("interaction functional needs W")
        if self.kind in ("half_w2_to", "neg_half_w2_to") and self.anchor is None:
            raise ValueError("distance functional needs an anchor measure")

    # library instances --------------------------------------------------
    @classmethod
    def second_moment(cls, scale: float = 1.0, lipschitz: float | None = None) -> "FunctionalSpec":
        lam = 2.0 * scale
        return cls("second_moment", lambda_geo=lam, scale=scale, lipschitz=lipschitz, lower_bound=0.0 if scale >= 0 else None, name="second_moment")

    @classmethod
    def potential(cls, V, grad_V=None, laplacian_V=None, lam=None, lipschitz=None, lower_bound=None, scale=1.0, name="potential"):
        return cls("potential", lambda_geo=lam, V=V, grad_V=grad_V, laplacian_V=laplacian_V, lipschitz=lipschitz, lower_bound=lower_bound, scale=scale, name=name)

    @classmethod
    def quadratic_potential(cls, alpha: float, center=None, scale: float = 1.0) -> "FunctionalSpec":
        """``int alpha |x - center|^2 / 2 dmu``, ``alpha``-convex (times ``scale``)."""

        def shift(x):
            return x if center is None else x - np.asarray(center, dtype=float)

        def V(x):
            y = shift(x)
            return 0.5 * alpha * np.einsum("ij,ij->i", y, y)

        def grad(x):
            return alpha * shift(x)

        def lap(x):
            return np.full(len(x), alpha * x.shape[1])

        # a negative scale turns the convexity modulus into a concavity modulus of the same value
        sense = "convex" if scale >= 0 else "concave"
        return cls(
            "potential",
            lambda_geo=alpha * scale,
            sense=sense,
            V=V,
            grad_V=grad,
            laplacian_V=lap,
            scale=scale,
            lower_bound=0.0 if scale >= 0 else None,
            name=f"quadratic_potential(alpha={alpha!r})",
        )

    @classmethod
    def soft_norm_potential(cls, center=None) -> "FunctionalSpec":
        """``int sqrt(1 + |x - c|^2) dmu``: 1-Lipschitz, convex, bounded below by 1."""

        c = None if center is None else np.asarray(center, dtype=float)

        def V(x):
            y = x if c is None else x - c
            return np.sqrt(1.0 + np.einsum("ij,ij->i", y, y))

        def grad(x):
            y = x if c is None else x - c
            return y / np.sqrt(1.0 + np.einsum("ij,ij->i", y, y))[:, None]

        return cls("potential", lambda_geo=0.0, V=V, grad_V=grad, lipschitz=1.0, lower_bound=1.0, name="soft_norm_potential")

    @classmethod
    def interaction(cls, W, grad_W=None, lam=None, lipschitz=None, lower_bound=None, name="interaction") -> "FunctionalSpec":
        return cls("interaction", lambda_geo=lam, W=W, grad_W=grad_W, lipschitz=lipschitz, lower_bound=lower_bound, name=name)

    @classmethod
    def quadratic_interaction(cls) -> "FunctionalSpec":
        """``1/2 iint |x - y|^2 dmu dmu`` (the variance), geodesically convex with modulus 0."""
        return cls.interaction(
            lambda z: np.einsum("ij,ij->i", z, z), lambda z: 2.0 * z, lam=0.0, lower_bound=0.0, name="quadratic_interaction"
        )

    @classmethod
    def entropy(cls) -> "FunctionalSpec":
        return cls("entropy", lambda_geo=0.0, name="entropy")

    @classmethod
    def half_w2_to(cls, anchor) -> "FunctionalSpec":
        """``1/2 W2^2(., anchor)``, 1-geodesically concave."""
        return cls("half_w2_to", lambda_geo=1.0, sense="concave", anchor=anchor, lower_bound=0.0, name="half_w2_to")

    @classmethod
    def neg_half_w2_to(cls, anchor) -> "FunctionalSpec":
        """``-1/2 W2^2(., anchor)``, (-1)-geodesically convex."""
        return cls("neg_half_w2_to", lambda_geo=-1.0, sense="convex", anchor=anchor, name="neg_half_w2_to")

    @classmethod
    def constant_value(cls, c: float) -> "FunctionalSpec":
        return cls("constant", lambda_geo=0.0, constant=c, lipschitz=0.0, lower_bound=c, name=f"constant({c!r})")

    # evaluation ---------------------------------------------------------
    def _anchor_measure(self) -> DiscreteMeasure:
        a = self.anchor
        return a.atomize() if isinstance(a, GridDensity) else a

    def __call__(self, mu: Measure) -> float:
        return self.evaluate(mu)

    def evaluate(self, mu: Measure) -> float:
        k = self.kind
        if k == "constant":
            return self.constant
        if k == "entropy":
            if not isinstance(mu, GridDensity):
                raise UnsupportedFunctionalError("entropy cannot be evaluated on measures with atoms")
            return self.scale * entropy(mu)
        if k == "second_moment":
            return self.scale * second_moment(mu)
        if isinstance(mu, GridDensity):
            if k == "potential":
                return self.scale * mu.riemann(self.V(mu.nodes()))
            mu = mu.atomize()
        if k == "potential":
            return self.scale * float(mu.weights @ self.V(mu.points))
        if k == "interaction":
            diff = (mu.points[:, None, :] - mu.points[None, :, :]).reshape(-1, mu.dim)
            vals = self.W(diff).reshape(mu.n, mu.n)
            return self.scale * 0.5 * float(mu.weights @ vals @ mu.weights)
        dist = w2(mu, self._anchor_measure()).distance
        sign = 1.0 if k == "half_w2_to" else -1.0
        return self.scale * sign * 0.5 * dist**2

    def position_gradient(self, mu: DiscreteMeasure, fd_step: float = 1e-5) -> np.ndarray:
        """Euclidean gradient of ``F`` with respect to the atom positions of ``mu``.

        Analytic where the kind allows it; central finite differences
        otherwise.
        """
        k = self.kind
        w = mu.weights[:, None]
        if k == "constant":
            return np.zeros_like(mu.points)
        if k == "second_moment":
            return self.scale * 2.0 * w * mu.points
        if k == "potential" and self.grad_V is not None:
            return self.scale * w * self.grad_V(mu.points)
        if k == "interaction" and self.grad_W is not None:
            diff = (mu.points[:, None, :] - mu.points[None, :, :]).reshape(-1, mu.dim)
            gw = self.grad_W(diff).reshape(mu.n, mu.n, mu.dim)
            # d/dx_i of 1/2 sum_jk w_j w_k W(x_j - x_k), W need not be even
            gw_rev = self.grad_W(-diff).reshape(mu.n, mu.n, mu.dim)
            return self.scale * 0.5 * w * (np.einsum("ijd,j->id", gw, mu.weights) - np.einsum("ijd,j->id", gw_rev, mu.weights))
        if k in ("half_w2_to", "neg_half_w2_to"):
            field_ = self.flat_gradient_at_atoms(mu)
            return w * field_
        if k == "entropy":
            raise UnsupportedFunctionalError("entropy has no position gradient on atomic measures")
        # finite differences
        grad = np.zeros_like(mu.points)
        for i in range(mu.n):
            for j in range(mu.dim):
                e = np.zeros_like(mu.points)
                e[i, j] = fd_step
                fp = self.evaluate(DiscreteMeasure(mu.points + e, mu.weights))
                fm = self.evaluate(DiscreteMeasure(mu.points - e, mu.weights))
                grad[i, j] = (fp - fm) / (2.0 * fd_step)
        return grad

    def flat_gradient_at_atoms(self, mu: DiscreteMeasure) -> np.ndarray | None:
        """``grad_x D_mu F(mu, x)`` at the atoms of ``mu`` when known in closed form."""
        k = self.kind
        x = mu.points
        if k == "constant":
            return np.zeros_like(x)
        if k == "second_moment":
            return self.scale * 2.0 * x
        if k == "potential" and self.grad_V is not None:
            return self.scale * self.grad_V(x)
        if k == "interaction" and self.grad_W is not None:
            diff = (x[:, None, :] - x[None, :, :]).reshape(-1, mu.dim)
            gw = self.grad_W(diff).reshape(mu.n, mu.n, mu.dim)
            gw_rev = self.grad_W(-diff).reshape(mu.n, mu.n, mu.dim)
            return self.scale * 0.5 * (np.einsum("ijd,j->id", gw, mu.weights) - np.einsum("ijd,j->id", gw_rev, mu.weights))
        if k in ("half_w2_to", "neg_half_w2_to"):
            plan = w2(mu, self._anchor_measure()).plan
            bary = barycentric_projection(plan)
            T = _align(bary.base, bary.values, mu)
            sign = 1.0 if k == "half_w2_to" else -1.0
            return self.scale * sign * (x - T)
        return None


def _align(base: DiscreteMeasure, values: np.ndarray, mu: DiscreteMeasure) -> np.ndarray:
    """Reorder values given at the merged atoms ``base`` onto the atoms of ``mu``."""
    from scipy.spatial import cKDTree

    dist, idx = cKDTree(base.points).query(mu.points, p=np.inf)
    if np.any(dist > 1e-9):
        raise ValueError("atoms do not match")
    return values[idx]


# ---------------------------------------------------------------------------
# flat derivative
# ---------------------------------------------------------------------------

SUPPORT_SAMPLE_MAX = 512


def _support_sample(mu: DiscreteMeasure) -> DiscreteMeasure:
    if mu.n <= SUPPORT_SAMPLE_MAX:
        return mu
    idx = np.linspace(0, mu.n - 1, SUPPORT_SAMPLE_MAX).round().astype(int)
    return DiscreteMeasure(mu.points[idx], mu.weights[idx], normalize=True)


def _raw_flat_derivative(F: FunctionalSpec, mu: DiscreteMeasure, base_value: float, x: np.ndarray, h: float) -> float:
    def quotient(hh: float) -> float:
        mix = mu.mixture(DiscreteMeasure.dirac(x), hh)
        return (F.evaluate(mix) - base_value) / hh

    # first-order Richardson step kills the O(h) term of the difference quotient
    return 2.0 * quotient(0.5 * h) - quotient(h)


def flat_derivative_numeric(F: FunctionalSpec, mu: Measure, x, h: float = 1e-2, check_support: bool = True) -> np.ndarray:
    """Flat derivative ``D_mu F(mu, x)`` from difference quotients along ``(1-h) mu + h delta_x``.

    The result is normalized to have zero mean under ``mu`` (evaluated on
    a deterministic support sample of at most 512 atoms).  ``x`` may be a
    single point or an ``(k, d)`` array; the return value has one entry per
    point.
    """
    if not 0.0 < h <= 0.1:
        raise ValueError("h must lie in (0, 0.1]")
    if F.kind == "entropy":
        raise UnsupportedFunctionalError("entropy is infinite on mixtures with a Dirac mass")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(mu, GridDensity):
        if pts.shape[1] != mu.dim:
            pts = pts.reshape(-1, mu.dim)
        if check_support and not all(mu.contains(p) for p in pts):
            raise ValueError("probe point outside the effective support of the density")
        mu_d = mu.atomize()
    else:
        if pts.shape[1] != mu.dim:
            pts = pts.reshape(-1, mu.dim)
        mu_d = mu
        if check_support:
            from scipy.spatial import cKDTree

            dist, _ = cKDTree(mu.points).query(pts, p=np.inf)
            if np.any(dist > 1e-9):
                raise ValueError("probe point is not in the support of the measure")
    base_value = F.evaluate(mu_d)
    sample = _support_sample(mu_d)
    mean = float(sample.weights @ np.array([_raw_flat_derivative(F, mu_d, base_value, s, h) for s in sample.points]))
    return np.array([_raw_flat_derivative(F, mu_d, base_value, p, h) for p in pts]) - mean
