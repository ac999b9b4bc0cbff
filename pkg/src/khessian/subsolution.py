"""The generalized-symmetric subsolution family and its radial special case.

A member is the profile

    omega(s) = beta + int_{sbar}^{s} (1 + alpha t^(-gamma))^(1/k) dt,
    gamma = k / (2 h_k(a)),

composed with ``s = x^T A x / 2``.  Integrals are taken in the variable
``log t`` on fixed-width Gauss-Legendre panels; the excess integrand
``(1 + alpha t^-gamma)^(1/k) - 1`` is formed with ``expm1``/``log1p`` so
the far tail keeps full relative precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import binom

from .exceptions import DomainError
from .spectral import sigma_k_generalized
from .symfun import (
    HessianParams,
    a_k_i,
    random_admissible,
    sigma,
    sigma_deleted,
    sigma_leave_one_out,
)

_PANEL = 0.25
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def excess_integrand(gamma, k, alpha, t):
    """``(1 + alpha t^-gamma)^(1/k) - 1`` without cancellation."""
    t = np.asarray(t, dtype=float)
    return np.expm1(np.log1p(alpha * t ** (-gamma)) / k)


def _panel_integral(gamma, k, alpha, x_lo, x_hi):
    """Gauss-Legendre integral of f(e^x) e^x over [x_lo, x_hi], elementwise."""
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    half = 0.5 * (x_hi - x_lo)
    mid = 0.5 * (x_hi + x_lo)
    x = mid[..., None] + half[..., None] * _GL_X
    t = np.exp(x)
    vals = excess_integrand(gamma, k, alpha, t) * t
    return half * (vals @ _GL_W)


def excess_between(gamma, k, alpha, s0, s):
    """``int_{s0}^{s} ((1 + alpha t^-gamma)^(1/k) - 1) dt`` for array ``s``.

    A cumulative table on panels ``log s0 + j * 0.25`` is built across the
    range spanned by ``s``; each query adds one partial panel.
    """
    s = np.asarray(s, dtype=float)
    if alpha == 0.0:
        return np.zeros_like(s)
    x0 = np.log(s0)
    X = np.log(s) - x0
    jmax = int(np.ceil(np.max(X, initial=0.0) / _PANEL)) + 1
    jmin = int(np.floor(np.min(X, initial=0.0) / _PANEL)) - 1
    nodes = x0 + _PANEL * np.arange(jmin, jmax + 1)
    pieces = _panel_integral(gamma, k, alpha, nodes[:-1], nodes[1:])
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    zero = -jmin
    cum = cum - cum[zero]
    j = np.trunc(X / _PANEL).astype(int)
    base = cum[zero + j]
    start = x0 + _PANEL * j
    return base + _panel_integral(gamma, k, alpha, start, x0 + X)


def tail_series(gamma, k, alpha, T, terms=40):
    """``int_T^inf excess`` from the binomial series; needs ``alpha T^-gamma < 1``.

    Returns ``(value, bound)`` where ``bound`` is the magnitude of the first
    omitted term (the series alternates with shrinking terms).
    """
    u = alpha * T ** (-gamma)
    if u >= 1.0:
        raise DomainError(f"tail cutoff too small: alpha T^-gamma = {u}")
    total = 0.0
    bound = 0.0
    for j in range(1, terms + 1):
        term = binom(1.0 / k, j) * alpha**j * T ** (1.0 - j * gamma) / (j * gamma - 1.0)
        if abs(term) <= 1e-18 * abs(total):
            bound = abs(term)
            break
        total += term
    else:
        bound = abs(term)
    return total, bound


def tail_cutoff(gamma, alpha):
    return max(1e6, 1e3 * alpha ** (1.0 / gamma)) if alpha > 0 else 1e6


def excess_to_infinity(gamma, k, alpha, s0):
    """``int_{s0}^inf excess`` = table up to the cutoff plus the series tail."""
    if gamma <= 1.0:
        raise DomainError(f"improper integral diverges for gamma={gamma} <= 1")
    if alpha == 0.0:
        return 0.0
    T = max(tail_cutoff(gamma, alpha), 10.0 * s0)
    body = float(excess_between(gamma, k, alpha, s0, T))
    tail, _ = tail_series(gamma, k, alpha, T)
    return body + tail


def tail_integral(gamma, k, alpha, s):
    """``int_s^inf excess`` for array ``s``, anchored at ``min(s)``."""
    s = np.asarray(s, dtype=float)
    lo = float(np.min(s))
    T = max(tail_cutoff(gamma, alpha), 10.0 * float(np.max(s)))
    upper = excess_between(gamma, k, alpha, lo, np.append(s, T))
    tail, _ = tail_series(gamma, k, alpha, T)
    return upper[-1] - upper[:-1] + tail


def _check_positive(s):
    s = np.asarray(s, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError("profile is defined for s > 0 only")
    return s


# -- the family -------------------------------------------------------------


def mu_of_alpha(params: HessianParams, alpha, beta, sbar):
    """``beta - sbar + int_{sbar}^inf excess``: the additive far-field constant."""
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    return beta - sbar + excess_to_infinity(params.gamma, params.k, float(alpha), sbar)


def alpha_of_c(params: HessianParams, c, beta, sbar, mu_tol=1e-8):
    """The unique alpha with ``mu(alpha) = c``; requires ``c > mu(0)``."""
    mu0 = beta - sbar
    if not c > mu0:
        raise DomainError(f"c={c} is out of range: need c > mu(0) = {mu0}")

    def gap(al):
        return mu_of_alpha(params, al, beta, sbar) - c

    lo, hi = 0.0, 1.0
    while gap(hi) <= 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 2.0**400:
            raise DomainError("could not bracket alpha(c)")
    root = optimize.brentq(gap, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    while abs(gap(root)) > mu_tol:  # pragma: no cover - brentq already hits machine precision
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if gap(mid) < 0 else (lo, mid)
        root = 0.5 * (lo + hi)
    return root


@dataclass(frozen=True)
class GeneralizedSubsolution:
    """One member ``omega_alpha`` of the family; ``mu`` is fixed at construction."""

    params: HessianParams
    alpha: float
    beta: float = 0.0
    sbar: float = 1.0
    mu: float = field(init=False)

    def __post_init__(self):
        if not self.alpha >= 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if not self.sbar > 0:
            raise DomainError(f"sbar must be positive, got {self.sbar}")
        object.__setattr__(self, "mu", mu_of_alpha(self.params, self.alpha, self.beta, self.sbar))

    @property
    def gamma(self):
        return self.params.gamma

    @property
    def k(self):
        return self.params.k

    def __call__(self, s):
        return omega_eval(self, s)

    def at_points(self, x):
        """``omega_alpha(x^T A x / 2)`` for points stacked on the last axis."""
        x = np.asarray(x, dtype=float)
        return omega_eval(self, 0.5 * np.sum(self.params.a * x * x, axis=-1))

    def d1(self, s):
        return omega_d1(self, s)

    def d2(self, s):
        return omega_d2(self, s)

    def deviation(self, s):
        """``omega(s) - s - mu``, computed as minus the tail integral past s."""
        s = _check_positive(s)
        return -tail_integral(self.gamma, self.k, self.alpha, s)

    def to_record(self):
        p = self.params
        return {
            "n": p.n,
            "k": p.k,
            "a": [float(v) for v in p.a],
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "sbar": float(self.sbar),
            "hk": p.hk,
            "theta": p.theta,
            "mu": float(self.mu),
        }

    @classmethod
    def from_record(cls, rec):
        params = HessianParams.from_vector(np.asarray(rec["a"], dtype=float), int(rec["k"]))
        return cls(params, float(rec["alpha"]), float(rec["beta"]), float(rec["sbar"]))


def omega_eval(w: GeneralizedSubsolution, s):
    s = _check_positive(s)
    return (w.beta + (s - w.sbar) + excess_between(w.gamma, w.k, w.alpha, w.sbar, s))[()]


def omega_d1(w: GeneralizedSubsolution, s):
    s = _check_positive(s)
    return np.power(1.0 + w.alpha * s ** (-w.gamma), 1.0 / w.k)[()]


def omega_d2(w: GeneralizedSubsolution, s):
    s = _check_positive(s)
    hk = w.params.hk
    ratio = w.alpha / (s**w.gamma + w.alpha)
    return (-ratio / (2.0 * hk * s) * omega_d1(w, s))[()]


def ode_residual(w: GeneralizedSubsolution, s):
    """``(w')^k + 2 h_k s w'' (w')^(k-1) - 1`` with the closed-form derivatives."""
    s = _check_positive(s)
    d1 = omega_d1(w, s)
    d2 = omega_d2(w, s)
    return d1**w.k + 2.0 * w.params.hk * s * d2 * d1 ** (w.k - 1) - 1.0


# -- verification -------------------------------------------------------------


@dataclass
class SubsolutionReport:
    n_points: int
    skipped: int
    min_sigma_k: float
    min_lower_sigmas: np.ndarray  # min over points of sigma_m, m = 1..k-1
    min_defect: float
    max_route_gap: float  # |direct formula - stable form| / (1 + alpha s^-gamma)
    passed: bool
    notes: list = field(default_factory=list)


def hessian_sigmas(w: GeneralizedSubsolution, x):
    """``sigma_m(lambda(D^2 omega_alpha(x)))`` for m = 1..k, shape ``(N, k)``.

    Uses the rearrangement

        sigma_m = w'^m [ sigma_m(a)/(1+u) + u/(1+u) sum_i c_i (sigma_m(a) - A_m^i/h_k) ],

    with ``u = alpha s^-gamma`` and convex weights ``c_i = a_i x_i^2 / 2s``.
    Every summand is non-negative, so the lower bounds survive rounding even
    when ``w'`` is huge near the origin.  For ``m = k`` it reduces to
    ``1 + u sum_i c_i (1 - A_k^i/h_k)``.
    """
    p = w.params
    a = p.a
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = 0.5 * np.sum(a * x * x, axis=-1)
    u = w.alpha * s ** (-w.gamma)
    r = u / (1.0 + u)
    c = (a * x * x) / (2.0 * s)[:, None]
    d1 = np.power(1.0 + u, 1.0 / p.k)
    out = np.empty((x.shape[0], p.k))
    for m in range(1, p.k + 1):
        am = a_k_i(a, m)
        if m == p.k:
            out[:, m - 1] = 1.0 + u * np.sum(c * (1.0 - am / p.hk), axis=-1)
        else:
            sm = sigma(a, m)
            inner = np.sum(c * (sm - am / p.hk), axis=-1)
            out[:, m - 1] = d1**m * (sm * (1.0 - r) + r * inner)
    return out


def sample_points(rng, n, count, rmin=1e-2, rmax=1e3):
    """Log-uniform radii with uniform directions, plus every +/- coordinate axis."""
    radii = np.exp(rng.uniform(np.log(rmin), np.log(rmax), size=count))
    dirs = rng.normal(size=(count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radii[:, None] * dirs
    axis_r = np.exp(rng.uniform(np.log(rmin), np.log(rmax), size=2 * n))
    axes = np.concatenate([np.eye(n), -np.eye(n)]) * axis_r[:, None]
    return np.concatenate([pts, axes])


def verify_subsolution(w: GeneralizedSubsolution, samples, tol=1e-9):
    """Check ``sigma_k >= 1 - tol`` and ``sigma_m >= -tol`` (m < k) at the samples."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    a = w.params.a
    s = 0.5 * np.sum(a * x * x, axis=-1)
    keep = s > 0
    notes = []
    if not np.all(keep):
        notes.append(f"skipped {int(np.sum(~keep))} sample(s) at the excluded point x = 0")
    x = x[keep]
    s = s[keep]
    sig = hessian_sigmas(w, x)
    sk = sig[:, -1]
    lower = sig[:, :-1]
    direct = sigma_k_generalized(omega_d1(w, s), omega_d2(w, s), a, x, w.k)
    scale = 1.0 + w.alpha * s ** (-w.gamma)
    gap = float(np.max(np.abs(direct - sk) / scale, initial=0.0))
    min_lower = np.min(lower, axis=0) if lower.shape[1] else np.zeros(0)
    passed = bool(np.all(sk >= 1.0 - tol) and np.all(lower >= -tol))
    return SubsolutionReport(
        n_points=int(x.shape[0]),
        skipped=int(np.sum(~keep)),
        min_sigma_k=float(np.min(sk, initial=np.inf)),
        min_lower_sigmas=min_lower,
        min_defect=float(np.min(sk - 1.0, initial=np.inf)),
        max_route_gap=gap,
        passed=passed,
        notes=notes,
    )


# -- asymptotics ------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticFit:
    slope: float
    intercept: float
    expected: float
    indeterminate: bool

    @property
    def rel_error(self):
        return abs(self.slope - self.expected) / abs(self.expected)


def default_fit_grid(w: GeneralizedSubsolution, decades=3.0, count=40):
    """Geometric grid starting where ``alpha s^-gamma <= 1e-2`` (and at >= 10 sbar)."""
    start = 10.0 * w.sbar
    if w.alpha > 0:
        start = max(start, (100.0 * w.alpha) ** (1.0 / w.gamma))
    return np.geomspace(start, start * 10**decades, count)


def asymptotic_fit(w: GeneralizedSubsolution, s_grid=None, floor=1e-14):
    """Least-squares slope of ``log|omega(s) - s - mu|`` against ``log s``.

    The expected slope is ``(2 - n) theta / 2 = 1 - gamma``.
    """
    s = default_fit_grid(w) if s_grid is None else np.asarray(s_grid, dtype=float)
    if s.min() < 10.0 * w.sbar * (1 - 1e-12):
        raise DomainError("fit grid must start at or beyond 10 * sbar")
    if np.log10(s.max() / s.min()) < 3.0 - 1e-9:
        raise DomainError("fit grid must span at least three decades")
    expected = (2.0 - w.params.n) * w.params.theta / 2.0
    dev = np.abs(w.deviation(s))
    if np.min(dev) < floor:
        return AsymptoticFit(float("nan"), float("nan"), expected, True)
    slope, intercept = np.polyfit(np.log(s), np.log(dev), 1)
    return AsymptoticFit(float(slope), float(intercept), expected, False)


# -- rigidity -------------------------------------------------------------------------


@dataclass
class RigidityReport:
    spread: float
    imax: int
    imin: int
    entries_equal: bool
    identity_residual: float  # |A^imax - A^imin - (a_imax - a_imin) sigma_{k-1;imax,imin}|
    witness: Optional[dict]


def rigidity_falsifier(a, k, level=1.0, trial_slope=2.0, spread_tol=1e-12):
    """Spread of ``A_k^i`` and, when positive, two axis points that disagree.

    An exact generalized-symmetric solution with ``omega'(level) = trial_slope``
    would need, at the axis point ``sqrt(2 level / a_i) e_i``,

        omega''(level) = (1 - w'^k) / (2 level w'^(k-1) A_k^i).

    Distinct ``A_k^i`` give distinct demands; the pair is the witness.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    if not 2 <= k <= n:
        raise DomainError(f"need 2 <= k <= n, got k={k}, n={n}")
    A = a_k_i(a, k)
    imax = int(np.argmax(A))
    imin = int(np.argmin(A))
    spread = float(A[imax] - A[imin])
    if imax != imin:
        ident = (a[imax] - a[imin]) * sigma_deleted(a, k - 1, [imax, imin])
        resid = abs(spread - float(ident))
    else:
        resid = 0.0
    equal = bool(np.max(a) - np.min(a) <= 1e-10)
    witness = None
    if spread > spread_tol:
        w1 = trial_slope
        pts, demands, achieved = [], [], []
        for i in (imax, imin):
            x = np.zeros(n)
            x[i] = np.sqrt(2.0 * level / a[i])
            d2 = (1.0 - w1**k) / (2.0 * level * w1 ** (k - 1) * A[i])
            pts.append(x)
            demands.append(float(d2))
            achieved.append(float(sigma_k_generalized(w1, d2, a, x, k)))
        witness = {
            "level": level,
            "omega1": w1,
            "points": pts,
            "omega2_demanded": demands,
            "sigma_k_at_demand": achieved,
        }
    return RigidityReport(spread, imax, imin, equal, resid, witness)


# -- the symmetric case ------------------------------------------------------------


@dataclass(frozen=True)
class RadialSolution:
    """``int_1^s (1 + alpha t^(-n/2))^(1/k) dt``, exact for ``A = c* I``."""

    n: int
    k: int
    alpha: float

    @property
    def gamma(self):
        return self.n / 2.0

    def __call__(self, s):
        s = _check_positive(s)
        return (s - 1.0 + excess_between(self.gamma, self.k, self.alpha, 1.0, s))[()]

    def d1(self, s):
        s = np.asarray(s)
        return np.power(1.0 + self.alpha * s ** (-self.gamma), 1.0 / self.k)

    def d2(self, s):
        s = np.asarray(s)
        return -(self.alpha / (s**self.gamma + self.alpha)) * self.n / (2.0 * self.k * s) * self.d1(s)

    def ode_residual(self, s, d2=None):
        """``(w')^k + 2 s (k/n) w'' (w')^(k-1) - 1``; ``d2`` overrides the closed form."""
        s = np.asarray(s, dtype=float)
        d1 = self.d1(s)
        d2 = self.d2(s) if d2 is None else d2
        return d1**self.k + 2.0 * s * (self.k / self.n) * d2 * d1 ** (self.k - 1) - 1.0

    def d2_complex_step(self, s, step=1e-30):
        """``w''`` by complex-step differentiation of the integrand."""
        s = np.asarray(s, dtype=float)
        z = s + 1j * step * s
        val = np.power(1.0 + self.alpha * z ** (-self.gamma), 1.0 / self.k)
        return np.imag(val) / (step * s)


def dirichlet_radial_profile(params: HessianParams, c, s_boundary, phi0, sbar=1.0):
    """Radial exact solution ``s + c - tail(s)`` matching ``phi0`` at ``s_boundary``.

    Only meaningful when ``A = c* I``, where the family solves the equation
    exactly.  Returned as the family member with ``mu(alpha) = c``.
    """
    target = s_boundary + c - phi0
    if not target > 0:
        raise DomainError("need phi0 < s_boundary + c for a radial solution")
    g, k = params.gamma, params.k

    def gap(al):
        return float(tail_integral(g, k, al, np.array([s_boundary]))[0]) - target

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
    alpha = optimize.brentq(gap, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    beta = c + sbar - excess_to_infinity(g, k, alpha, sbar)
    return GeneralizedSubsolution(params, alpha, beta, sbar)


def radial_two_point(params: HessianParams, s_in, v_in, s_out, v_out):
    """Family member with ``omega(s_in) = v_in`` and ``omega(s_out) = v_out``.

    For ``A = c* I`` every member solves the equation exactly, so this is the
    exact solution of the annular problem between the two level sets.
    Needs ``v_out - v_in > s_out - s_in`` (a positive alpha).
    """
    if not 0 < s_in < s_out:
        raise DomainError("need 0 < s_in < s_out")
    rise = v_out - v_in - (s_out - s_in)
    if not rise > 0:
        raise DomainError("boundary values admit no member with alpha > 0")
    g, k = params.gamma, params.k

    def gap(al):
        return float(excess_between(g, k, al, s_in, np.array([s_out]))[0]) - rise

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
    alpha = optimize.brentq(gap, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    return GeneralizedSubsolution(params, alpha, float(v_in), float(s_in))


def random_instance(rng, n, k, alpha_range=(1e-2, 1e2)):
    a = random_admissible(rng, n, k)
    params = HessianParams.from_vector(a, k)
    alpha = float(np.exp(rng.uniform(*np.log(alpha_range))))
    return GeneralizedSubsolution(params, alpha, beta=float(rng.normal()), sbar=float(rng.uniform(0.5, 2.0)))
