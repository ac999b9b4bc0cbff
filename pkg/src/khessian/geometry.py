"""Strictly convex domains and boundary data.

The supported domain class is the general ellipsoid
``{x : (x - x0)^T Q (x - x0) < 1}`` with ``Q = R diag(r^-2) R^T``.  It is
strictly convex with a smooth boundary, and both the local boundary graph
and segment crossings reduce to quadratic equations with closed-form roots.
Boundary data is given by an ambient polynomial whose restriction to the
boundary is the prescribed function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .exceptions import DomainError


def _stable_small_root(a2, b1, c0):
    """Smaller root of ``a2 r^2 + 2 b1 r + c0`` (a2 > 0); nan without real roots."""
    disc = b1 * b1 - a2 * c0
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(-b1 + sq != 0, c0 / (-b1 + sq), 0.0)
    root = np.where(b1 < 0, neg, (-b1 - sq) / a2)
    return np.where(ok, root, np.nan)


def fibonacci_sphere(count):
    """Quasi-uniform points on the unit 2-sphere (golden-angle spiral)."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sobol_sphere(n, count, seed=0):
    """Scrambled-Sobol points pushed to the unit sphere; prefixes are nested."""
    m = int(np.ceil(np.log2(max(count, 2))))
    u = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(m)[:count]
    from scipy.special import ndtri

    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_directions(dim, count):
    """Fixed direction set in ``R^dim`` used for local cap sampling."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        return fibonacci_sphere(count)
    return sobol_sphere(dim, count, seed=12345)


@dataclass(frozen=True)
class EllipsoidDomain:
    """Bounded strictly convex domain bounded by an ellipsoid."""

    semi_axes: np.ndarray
    center: np.ndarray = None
    rotation: np.ndarray = None  # orthogonal; columns are the axis directions

    def __post_init__(self):
        r = np.array(self.semi_axes, dtype=float)
        if r.ndim != 1 or r.size < 2 or np.any(~(r > 0)):
            raise DomainError("semi-axes must be a positive vector with n >= 2")
        n = r.size
        c = np.zeros(n) if self.center is None else np.array(self.center, dtype=float)
        R = np.eye(n) if self.rotation is None else np.array(self.rotation, dtype=float)
        if c.shape != (n,) or R.shape != (n, n):
            raise DomainError("center/rotation shapes do not match the semi-axes")
        if np.max(np.abs(R.T @ R - np.eye(n))) > 1e-10:
            raise DomainError("rotation must be orthogonal")
        object.__setattr__(self, "semi_axes", r)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def ball(cls, n, radius=1.0, center=None):
        return cls(np.full(n, float(radius)), center)

    @property
    def n(self):
        return self.semi_axes.size

    @cached_property
    def Q(self):
        R = self.rotation
        return (R / self.semi_axes**2) @ R.T

    @property
    def diameter(self):
        return 2.0 * float(np.max(self.semi_axes))

    @property
    def contains_origin(self):
        return bool(self.level(np.zeros(self.n)) < 1.0)

    def level(self, x):
        y = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", y, self.Q, y)

    def contains(self, x):
        """Open-set membership."""
        return self.level(x) < 1.0

    def from_sphere(self, z):
        """Map unit vectors onto the boundary."""
        return self.center + (np.asarray(z) * self.semi_axes) @ self.rotation.T

    def outward_normal(self, x):
        g = (np.asarray(x, dtype=float) - self.center) @ self.Q
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def bounding_box(self):
        half = np.sqrt(np.sum((self.rotation * self.semi_axes) ** 2, axis=1))
        return self.center - half, self.center + half

    def boundary_mesh(self, count, kind="auto", seed=0):
        """Quasi-uniform boundary points: Fibonacci spiral for n = 3, Sobol otherwise.

        ``kind="sobol"`` forces the nested Sobol family (prefixes of a larger
        mesh are the smaller mesh), which is what refinement studies need.
        """
        if kind == "auto":
            kind = "fibonacci" if self.n == 3 else "sobol"
        if kind == "fibonacci":
            if self.n != 3:
                raise DomainError("Fibonacci meshes exist for n = 3 only")
            z = fibonacci_sphere(count)
        elif kind == "sobol":
            z = sobol_sphere(self.n, count, seed)
        else:
            raise DomainError(f"unknown mesh kind {kind!r}")
        return self.from_sphere(z)

    def random_boundary(self, rng, count):
        z = rng.normal(size=(count, self.n))
        return self.from_sphere(z / np.linalg.norm(z, axis=1, keepdims=True))

    def on_boundary(self, x, tol=1e-10):
        return np.abs(self.level(x) - 1.0) <= tol

    def local_frame(self, xi):
        """``(nu_in, T)``: inward unit normal and an orthonormal tangent basis (n, n-1).

        The frame is the Householder reflection taking the outward normal to
        ``-e_n``; when the outward normal leans toward ``-e_n`` the reflection
        onto ``+e_n`` is used and the last axis flipped, so the reflector
        vector never comes close to zero.
        """
        nu = self.outward_normal(xi)
        n = self.n
        e = np.zeros(n)
        e[-1] = 1.0
        if nu[-1] < 0:
            v = nu - e
            H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
            M = H.copy()
            M[-1] *= -1.0
        else:
            v = nu + e
            M = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
        # rows of M are the local axes expressed in world coordinates
        return M[-1].copy(), M[:-1].T.copy()

    def graph_height(self, xi, nu_in, T, xprime):
        """Height ``rho(x')`` of the near boundary sheet over the tangent plane at xi."""
        xprime = np.atleast_2d(xprime)
        y0 = (xi - self.center) + xprime @ T.T
        Q = self.Q
        a2 = nu_in @ Q @ nu_in
        b1 = y0 @ Q @ nu_in
        c0 = np.einsum("ni,ij,nj->n", y0, Q, y0) - 1.0
        return _stable_small_root(a2, b1, c0)

    def segment_crossing(self, p, q):
        """Fraction ``tau`` in [0, 1] where the segment p -> q meets the boundary.

        Points are stacked on the last axis; returns nan where the segment
        does not cross.  Roots within a few ulps outside [0, 1] are clipped
        onto it, so an endpoint lying exactly on the boundary still crosses.
        """
        p = np.asarray(p, dtype=float)
        d = np.asarray(q, dtype=float) - p
        y = p - self.center
        Q = self.Q
        a2 = np.einsum("...i,ij,...j->...", d, Q, d)
        b1 = np.einsum("...i,ij,...j->...", y, Q, d)
        c0 = np.einsum("...i,ij,...j->...", y, Q, y) - 1.0
        disc = b1 * b1 - a2 * c0
        sq = np.sqrt(np.maximum(disc, 0.0))
        eps = 8 * np.finfo(float).eps
        r1 = (-b1 - sq) / a2
        r2 = (-b1 + sq) / a2
        in1 = (r1 >= -eps) & (r1 <= 1 + eps)
        in2 = (r2 >= -eps) & (r2 <= 1 + eps)
        tau = np.clip(np.where(in1, r1, np.where(in2, r2, np.nan)), 0.0, 1.0)
        # a tangent segment has disc = 0 up to rounding
        return np.where(disc >= -eps * np.maximum(b1 * b1, np.abs(a2 * c0)), tau, np.nan)

    @cached_property
    def convexity_modulus(self):
        """A verified ``delta`` with ``rho(x') >= delta |x'|^2`` for ``|x'| < delta``."""
        return convexity_modulus(self)

    def max_quadratic_level(self, a, iters=500):
        """``max over the closed domain of x^T diag(a) x / 2``.

        A convex function peaks on the boundary; parametrizing ``x = c + M z``
        with ``|z| = 1`` gives ``f(z) = z^T B z / 2 + b.z + const``, and the
        ascent map ``z <- normalize(B z + b)`` never decreases f.  It is
        started from the best of a dense sample.
        """
        a = np.asarray(a, dtype=float)
        M = self.rotation * self.semi_axes
        B = M.T @ (a[:, None] * M)
        b = M.T @ (a * self.center)
        const = 0.5 * self.center @ (a * self.center)
        f = lambda z: 0.5 * np.einsum("...i,ij,...j->...", z, B, z) + z @ b + const
        if self.n == 3:
            z0 = fibonacci_sphere(4096)
        else:
            z0 = sobol_sphere(self.n, 4096)
        vals = f(z0)
        best = z0[np.argsort(vals)[-8:]]
        out = float(vals.max())
        for z in best:
            for _ in range(iters):
                g = B @ z + b
                nz = g / np.linalg.norm(g)
                if np.linalg.norm(nz - z) < 1e-15:
                    break
                z = nz
            out = max(out, float(f(z)))
        return out


def convexity_modulus(D: EllipsoidDomain, xi_count=256, radii=24, dirs=16, max_halvings=60):
    """Start from ``0.9 r_min / (2 r_max^2)`` and halve until sampled caps comply."""
    r = D.semi_axes
    delta = 0.9 * r.min() / (2.0 * r.max() ** 2)
    xis = D.boundary_mesh(xi_count, kind="sobol", seed=7)
    U = sphere_directions(D.n - 1, dirs)
    for _ in range(max_halvings):
        ok = True
        rad = np.geomspace(1e-4 * delta, delta * (1 - 1e-9), radii)
        xp = (rad[:, None, None] * U[None, :, :]).reshape(-1, D.n - 1)
        r2 = np.sum(xp * xp, axis=1)
        for xi in xis:
            nu, T = D.local_frame(xi)
            rho = D.graph_height(xi, nu, T, xp)
            if np.any(~np.isfinite(rho)) or np.any(rho < delta * r2 * (1 - 1e-12)):
                ok = False
                break
        if ok:
            return float(delta)
        delta *= 0.5
    raise DomainError("could not certify a convexity modulus; domain degenerate?")


# -- boundary data ---------------------------------------------------------------


@dataclass(frozen=True)
class Polynomial:
    """``sum_j coef_j prod_i x_i^(p_ji)``; restricted to the boundary it is phi."""

    n: int
    terms: Tuple[Tuple[float, Tuple[int, ...]], ...] = field(default_factory=tuple)

    def __post_init__(self):
        clean = []
        for coef, powers in self.terms:
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.n or any(p < 0 for p in powers):
                raise DomainError(f"bad exponent tuple {powers} for n={self.n}")
            clean.append((float(coef), powers))
        object.__setattr__(self, "terms", tuple(clean))

    @classmethod
    def constant(cls, n, value):
        return cls(n, ((float(value), (0,) * n),))

    @classmethod
    def from_quadratic(cls, H, g=None, c0=0.0):
        """``x^T H x / 2 + g.x + c0`` as a polynomial."""
        H = np.asarray(H, dtype=float)
        n = H.shape[0]
        g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
        terms = [(c0, (0,) * n)]
        for i in range(n):
            e = [0] * n
            e[i] = 1
            if g[i]:
                terms.append((g[i], tuple(e)))
            for j in range(i, n):
                e2 = [0] * n
                e2[i] += 1
                e2[j] += 1
                coef = 0.5 * H[i, i] if i == j else H[i, j]
                if coef:
                    terms.append((coef, tuple(e2)))
        return cls(n, tuple(terms))

    @staticmethod
    def _mono(x, powers):
        out = np.ones(x.shape[:-1])
        for i, p in enumerate(powers):
            if p:
                out = out * x[..., i] ** p
        return out

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for coef, powers in self.terms:
            out = out + coef * self._mono(x, powers)
        return out[()]

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for coef, powers in self.terms:
            for i, p in enumerate(powers):
                if p:
                    d = list(powers)
                    d[i] -= 1
                    out[..., i] += coef * p * self._mono(x, d)
        return out

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n,))
        for coef, powers in self.terms:
            for i, pi in enumerate(powers):
                if not pi:
                    continue
                for j, pj in enumerate(powers):
                    d = list(powers)
                    d[i] -= 1
                    if d[j] <= 0:
                        continue
                    fac = pi * d[j]
                    d[j] -= 1
                    out[..., i, j] += coef * fac * self._mono(x, d)
        return out


@dataclass(frozen=True)
class TransformedData:
    """``phi'(y) = phi(O^T y) - b . (O^T y)``: data seen after ``y = O x``."""

    base: object
    O: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.base.n

    def value(self, y):
        x = np.asarray(y, dtype=float) @ self.O
        return self.base.value(x) - x @ self.b

    def grad(self, y):
        x = np.asarray(y, dtype=float) @ self.O
        return (self.base.grad(x) - self.b) @ self.O.T

    def hess(self, y):
        x = np.asarray(y, dtype=float) @ self.O
        return self.O @ self.base.hess(x) @ self.O.T


@dataclass(frozen=True)
class BoundaryData:
    """Data ``phi`` on the boundary of ``domain`` with value/gradient/Hessian evaluators.

    ``tangential_grad`` strips the normal component; ``hessian_bound`` is a
    bound for ``||D^2 phi||_2`` over the bounding box (sampled, with a 10%
    allowance), used by the barrier's near-cap estimate.
    """

    domain: EllipsoidDomain
    phi: object

    def value(self, x):
        return self.phi.value(x)

    def grad(self, x):
        return self.phi.grad(x)

    def tangential_grad(self, x):
        g = self.phi.grad(x)
        nu = self.domain.outward_normal(x)
        return g - np.sum(g * nu, axis=-1, keepdims=True) * nu

    def tangential_hess(self, x):
        """Second fundamental form corrected tangential Hessian, shape (..., n, n)."""
        x = np.asarray(x, dtype=float)
        nu = self.domain.outward_normal(x)
        n = self.domain.n
        P = np.eye(n) - nu[..., :, None] * nu[..., None, :]
        H = self.phi.hess(x)
        g = self.phi.grad(x)
        Q = self.domain.Q
        gradl = np.linalg.norm((x - self.domain.center) @ Q, axis=-1)
        shape = P @ Q @ P / gradl[..., None, None]
        dn = np.sum(g * nu, axis=-1)
        return P @ H @ P - dn[..., None, None] * shape

    @cached_property
    def hessian_bound(self):
        lo, hi = self.domain.bounding_box()
        m = 7 if self.domain.n <= 4 else 4
        axes = [np.linspace(l, h, m) for l, h in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.domain.n)
        H = self.phi.hess(pts)
        return 1.1 * float(np.max(np.linalg.norm(H, ord=2, axis=(-2, -1)), initial=0.0))

    @cached_property
    def c2_norm(self):
        pts = self.domain.boundary_mesh(2048, kind="sobol", seed=3)
        v = np.max(np.abs(self.value(pts)))
        g = np.max(np.linalg.norm(self.tangential_grad(pts), axis=-1))
        h = np.max(np.linalg.norm(self.tangential_hess(pts), ord=2, axis=(-2, -1)))
        return float(v + g + h)
