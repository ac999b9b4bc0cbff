"""Boundary barriers, their finite envelope, and the sub/supersolution sandwich.

Every barrier is a quadratic ``w(x) = x^T A x / 2 + l.x + m`` with the
admissible matrix ``A`` as Hessian, so ``sigma_k(D^2 w) = 1`` identically.
The envelope of finitely many such quadratics stays cheap to evaluate:
``x^T A x / 2 + max_j (l_j.x + m_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ContractViolation, ConvexityError, DomainError
from .geometry import BoundaryData, EllipsoidDomain, sphere_directions
from .subsolution import GeneralizedSubsolution, alpha_of_c, mu_of_alpha
from .symfun import AdmissibleMatrix, HessianParams

MAX_DOUBLINGS = 40


def _quad(a, x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sum(a * x * x, axis=-1)


@dataclass(frozen=True)
class Barrier:
    """``w_xi(x) = phi(xi) + ((x - xbar)^T A (x - xbar) - (xi - xbar)^T A (xi - xbar)) / 2``."""

    xi: np.ndarray
    xbar: np.ndarray
    t: float
    a: np.ndarray  # diagonal of A
    phi_xi: float
    nu_in: np.ndarray
    doublings: int = 0
    cap_margin: float = float("nan")  # max of the near-cap bound (negative)
    off_cap_gap: float = float("nan")  # max of w - phi away from the cap (negative)

    @property
    def linear(self):
        """``l = -A xbar``."""
        return -self.a * self.xbar

    @property
    def offset(self):
        """``m`` so that ``w = x^T A x / 2 + l.x + m``."""
        return self.phi_xi - _quad(self.a, self.xi) + (self.a * self.xbar) @ self.xi

    def __call__(self, x):
        y = np.asarray(x, dtype=float) - self.xi
        lin = -(self.a * (self.xbar - self.xi))
        return self.phi_xi + _quad(self.a, y) + y @ lin

    def gap(self, phi: BoundaryData, x):
        """``w_xi(x) - phi(x)``."""
        return self(x) - phi.value(x)


def _cap_samples(D: EllipsoidDomain, delta, radii=24, dirs=16):
    U = sphere_directions(D.n - 1, dirs)
    rad = np.geomspace(1e-4 * delta, delta * (1 - 1e-9), radii)
    return (rad[:, None, None] * U[None, :, :]).reshape(-1, D.n - 1)


def build_barrier(D: EllipsoidDomain, phi: BoundaryData, A: AdmissibleMatrix, xi,
                  check_points=None, t0=1.0, eps_sep=None):
    """Barrier touching ``phi`` from below at ``xi``.

    With ``nu`` the inward normal and ``g`` the tangential gradient of phi at
    xi, ``A (xbar - xi) = t nu - g``.  The tilt ``t`` doubles from ``t0`` until

    * in the cap ``|x'| < delta`` on the near sheet, the rigorous bound
      ``C (|x'|^2 + rho^2) + |d_nu phi| rho - t rho < 0`` holds with
      ``C = (lambda_max(A) + ||D^2 phi||) / 2``;
    * at the remaining ``check_points``, ``w - phi < -eps_sep``.
    """
    a = np.asarray(A.a if isinstance(A, AdmissibleMatrix) else A, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not D.on_boundary(xi, tol=1e-9):
        raise DomainError(f"xi = {xi} is not on the boundary (level {D.level(xi)})")
    nu, T = D.local_frame(xi)
    g_full = phi.grad(xi)
    d_nu = float(g_full @ nu)
    g = g_full - d_nu * nu
    delta = D.convexity_modulus
    C = 0.5 * (float(np.max(a)) + phi.hessian_bound)
    if eps_sep is None:
        eps_sep = 1e-8 * (1.0 + phi.c2_norm)
    if check_points is None:
        check_points = D.boundary_mesh(32 * D.n**2 * 8, kind="sobol", seed=11)
    pts = np.asarray(check_points, dtype=float)
    y = pts - xi
    tang = y @ T
    near = (D.outward_normal(pts) @ nu < 0) & (np.linalg.norm(tang, axis=1) < delta)
    off = pts[~near]
    xp = _cap_samples(D, delta)
    rho = D.graph_height(xi, nu, T, xp)
    r2 = np.sum(xp * xp, axis=1)
    phi_xi = float(phi.value(xi))
    phi_off = phi.value(off)

    t = float(t0)
    for j in range(MAX_DOUBLINGS + 1):
        cap = C * (r2 + rho * rho) + (abs(d_nu) - t) * rho
        xbar = xi + (t * nu - g) / a
        b = Barrier(xi, xbar, t, a, phi_xi, nu, j)
        gaps = b(off) - phi_off
        cap_max = float(np.max(cap))
        gap_max = float(np.max(gaps, initial=-np.inf))
        if cap_max < 0 and gap_max < -eps_sep:
            return Barrier(xi, xbar, t, a, phi_xi, nu, j, cap_max, gap_max)
        t *= 2.0
    raise ConvexityError(
        f"no separation at xi={xi} after {MAX_DOUBLINGS} doublings of t "
        f"(cap bound {cap_max:.3e}, off-cap gap {gap_max:.3e})"
    )


@dataclass(frozen=True)
class Envelope:
    """Pointwise maximum over a finite set of barriers."""

    a: np.ndarray
    L: np.ndarray  # (M, n) linear parts
    m: np.ndarray  # (M,) offsets
    barriers: tuple = field(default=(), repr=False)

    @classmethod
    def of(cls, barriers):
        barriers = tuple(barriers)
        if not barriers:
            raise DomainError("envelope needs at least one barrier")
        a = barriers[0].a
        L = np.stack([b.linear for b in barriers])
        m = np.array([b.offset for b in barriers])
        return cls(a, L, m, barriers)

    def linear_max(self, x, chunk=4096):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0])
        for s in range(0, x.shape[0], chunk):
            out[s : s + chunk] = np.max(x[s : s + chunk] @ self.L.T + self.m, axis=1)
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        val = _quad(self.a, flat) + self.linear_max(flat)
        return val.reshape(x.shape[:-1])[()]

    def ellipsoid_extremes(self, s):
        """Per-barrier (min over closed E(s), max over boundary of E(s)).

        With ``z = A^(1/2) x`` each barrier is ``|z|^2/2 + v.z + m`` on the
        ball ``|z|^2 <= 2s``, ``v = A^(-1/2) l``.
        """
        v = np.linalg.norm(self.L / np.sqrt(self.a), axis=1)
        r = np.sqrt(2.0 * s)
        inside = v <= r
        lo = np.where(inside, -0.5 * v * v, s - r * v) + self.m
        hi = s + r * v + self.m
        return lo, hi


def envelope_w(D, phi, A, xi_mesh, **kw):
    return Envelope.of([build_barrier(D, phi, A, xi, **kw) for xi in np.atleast_2d(xi_mesh)])


def default_xi_mesh(D: EllipsoidDomain, count=None):
    return D.boundary_mesh(count or 32 * D.n**2)


# -- proof constants ---------------------------------------------------------------


@dataclass(frozen=True)
class ProofConstants:
    params: HessianParams
    sbar: float
    beta: float
    bhat: float
    shat: float
    alphahat: float
    cstar_threshold: float
    w_max_on_shat: float
    envelope: Envelope = field(repr=False)

    def to_record(self):
        return {
            "sbar": self.sbar,
            "beta": self.beta,
            "bhat": self.bhat,
            "shat": self.shat,
            "alphahat": self.alphahat,
            "cstar_threshold": self.cstar_threshold,
            "w_max_on_shat": self.w_max_on_shat,
            "mu0": self.beta - self.sbar,
            "t_max": max(b.t for b in self.envelope.barriers) if self.envelope.barriers else None,
            "xbar_max_norm": max(float(np.linalg.norm(b.xbar)) for b in self.envelope.barriers)
            if self.envelope.barriers else None,
        }


def proof_constants(D: EllipsoidDomain, phi: BoundaryData, A: AdmissibleMatrix, sbar,
                    envelope: Optional[Envelope] = None, xi_mesh=None):
    """``beta, bhat, shat = 2 sbar, alphahat`` and the threshold ``c_*``.

    ``beta`` is the minimum of the barriers over the whole closed ellipsoid
    ``E(sbar)`` (a lower bound for the minimum over ``E(sbar)`` minus D,
    which is all the construction needs).  ``bhat`` is exact: a convex
    function on ``E(sbar)`` minus D peaks on the outer boundary.
    """
    if not D.contains_origin:
        raise DomainError("the construction assumes 0 lies in D")
    top = D.max_quadratic_level(A.a)
    if not top < sbar:
        raise DomainError(f"closure of D is not inside E(sbar): max x^T A x/2 = {top} >= {sbar}")
    params = HessianParams.from_vector(A, A.k)
    if envelope is None:
        envelope = envelope_w(D, phi, A, default_xi_mesh(D) if xi_mesh is None else xi_mesh)
    lo, hi = envelope.ellipsoid_extremes(sbar)
    beta = float(np.min(lo))
    bhat = float(np.max(hi))
    shat = 2.0 * sbar
    _, hi_hat = envelope.ellipsoid_extremes(shat)
    wmax = float(np.max(hi_hat))
    alphahat = 2.0**-10
    for _ in range(400):
        if float(GeneralizedSubsolution(params, alphahat, beta, sbar)(shat)) > wmax:
            break
        alphahat *= 2.0
    else:  # pragma: no cover
        raise DomainError("alphahat search did not terminate")
    thresh = max(bhat + 1e-6 * (1.0 + abs(bhat)), mu_of_alpha(params, alphahat, beta, sbar))
    return ProofConstants(params, float(sbar), beta, bhat, shat, alphahat, float(thresh), wmax, envelope)


# -- sandwich ------------------------------------------------------------------------


@dataclass(frozen=True)
class Sandwich:
    constants: ProofConstants
    c: float
    omega: GeneralizedSubsolution
    checks: dict

    @property
    def a(self):
        return self.constants.params.a

    def u_upper(self, x):
        return _quad(self.a, x) + self.c

    def omega_at(self, x):
        s = _quad(self.a, x)
        out = np.full(np.shape(s), -np.inf)
        pos = s > 0
        if np.any(pos):
            out[pos] = self.omega(s[pos])
        return out[()]

    def u_lower(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        out = np.atleast_1d(self.omega_at(flat)).copy()
        inner = _quad(self.a, flat) < self.constants.shat
        if np.any(inner):
            out[inner] = np.maximum(out[inner], self.constants.envelope(flat[inner]))
        return out.reshape(x.shape[:-1])[()]


def sample_exterior(D: EllipsoidDomain, rng, count, rmax=1e3):
    """Points outside D: log-uniform distance beyond the boundary along random rays."""
    z = rng.normal(size=(count, D.n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    pts = D.center + np.zeros((count, D.n))
    far = pts + rmax * 4 * z
    tau = D.segment_crossing(pts, far)
    base = pts + tau[:, None] * (far - pts)
    dist = np.exp(rng.uniform(np.log(1e-6), np.log(rmax), size=count))
    return base + dist[:, None] * z


def sample_shell(D: EllipsoidDomain, a, s_hi, rng, count):
    """Points of ``E(s_hi)`` outside the closure of D, by rejection."""
    half = np.sqrt(2.0 * s_hi / np.asarray(a))
    out = []
    total = 0
    while total < count:
        x = rng.uniform(-1, 1, size=(4 * count, D.n)) * half
        keep = (_quad(a, x) <= s_hi) & ~D.contains(x) & (D.level(x) > 1.0)
        out.append(x[keep])
        total += int(keep.sum())
    return np.concatenate(out)[:count]


def sandwich(D: EllipsoidDomain, phi: BoundaryData, A: AdmissibleMatrix, c, constants: ProofConstants,
             rng=None, samples=100_000, atol=1e-12):
    """Assemble ``(u_lower, u_upper)`` for ``c`` above the threshold and check them."""
    if not c > constants.cstar_threshold:
        raise DomainError(f"c = {c} must exceed the threshold {constants.cstar_threshold}")
    rng = np.random.default_rng(0) if rng is None else rng
    params = constants.params
    alpha = alpha_of_c(params, c, constants.beta, constants.sbar)
    omega = GeneralizedSubsolution(params, alpha, constants.beta, constants.sbar)
    env = constants.envelope
    checks = {"alpha": alpha}

    om_hat = float(omega(constants.shat))
    checks["omega_on_shat_minus_wmax"] = om_hat - constants.w_max_on_shat
    if not om_hat > constants.w_max_on_shat:
        raise ContractViolation("omega_alpha(c) does not dominate the envelope on the boundary of E(shat)")

    shell = sample_shell(D, params.a, constants.sbar, rng, max(1000, samples // 20))
    wshell = env(shell)
    bad = np.flatnonzero(wshell < constants.beta - atol)
    if bad.size:
        raise ContractViolation("envelope dips below beta inside E(sbar)", point=shell[bad[0]])
    om_shell = GeneralizedSubsolution(params, alpha, constants.beta, constants.sbar)(_quad(params.a, shell))
    bad = np.flatnonzero(om_shell > constants.beta + atol)
    if bad.size:
        raise ContractViolation("omega exceeds beta inside E(sbar)", point=shell[bad[0]])

    pair = Sandwich(constants, float(c), omega, checks)
    xis = np.stack([b.xi for b in env.barriers])
    bnd = np.abs(pair.u_lower(xis) - phi.value(xis))
    checks["boundary_attainment"] = float(np.max(bnd))
    if np.max(bnd) > atol * (1.0 + np.max(np.abs(phi.value(xis)))):
        raise ContractViolation("u_lower differs from phi at a barrier point", point=xis[int(np.argmax(bnd))])

    pts = sample_exterior(D, rng, samples)
    lo = pair.u_lower(pts)
    up = pair.u_upper(pts)
    scale = 1.0 + np.abs(up)
    viol = lo - up > atol * scale
    checks["ordering_max"] = float(np.max((lo - up) / scale))
    checks["ordering_samples"] = int(pts.shape[0])
    if np.any(viol):
        raise ContractViolation("u_lower exceeds u_upper", point=pts[np.flatnonzero(viol)[0]])
    return pair
