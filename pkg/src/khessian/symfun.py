"""Elementary symmetric functions and the quantities built from them.

All functions accept an array whose last axis holds the variables
``a = (a_1, ..., a_n)``; leading axes are treated as a batch.  Indices
are zero-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .exceptions import DomainError

NORMALIZATION_TOL = 1e-12


def _as_vector(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        raise DomainError("expected at least one variable")
    return a


def elementary_all(a, kmax):
    """Return ``sigma_0(a), ..., sigma_kmax(a)`` stacked on a new last axis.

    One pass of the prefix recurrence ``e_j <- e_j + a_i e_{j-1}``; entries
    with ``j > n`` come out as zero.
    """
    a = _as_vector(a)
    n = a.shape[-1]
    e = np.zeros(a.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        ai = a[..., i : i + 1]
        top = min(i + 1, kmax)
        if top >= 1:
            e[..., 1 : top + 1] += ai * e[..., 0:top]
    return e


def sigma(a, k):
    """k-th elementary symmetric function of the entries of ``a``.

    ``sigma(a, 0) == 1`` and ``sigma(a, -1) == 0`` by convention.
    """
    a = _as_vector(a)
    n = a.shape[-1]
    if k < -1 or k > n:
        raise DomainError(f"sigma_k needs -1 <= k <= n, got k={k}, n={n}")
    if k == -1:
        return np.zeros(a.shape[:-1])[()]
    return elementary_all(a, k)[..., k][()]


def sigma_deleted(a, k, excluded):
    """sigma_k of the variables left after removing the indices in ``excluded``.

    Returns 0 when fewer than ``k`` variables remain.
    """
    a = _as_vector(a)
    n = a.shape[-1]
    excluded = [int(i) for i in excluded]
    if len(set(excluded)) != len(excluded):
        raise DomainError(f"duplicate indices in {excluded}")
    if any(i < 0 or i >= n for i in excluded):
        raise DomainError(f"indices {excluded} out of range for n={n}")
    if k < -1:
        raise DomainError(f"k must be >= -1, got {k}")
    keep = [i for i in range(n) if i not in set(excluded)]
    rest = a[..., keep]
    if k == -1 or k > len(keep):
        return np.zeros(a.shape[:-1])[()]
    if len(keep) == 0:
        return np.ones(a.shape[:-1])[()]
    return elementary_all(rest, k)[..., k][()]


def sigma_leave_one_out(a, k):
    """``sigma_{k;i}(a)`` for every i at once, shape ``(..., n)``.

    Built from prefix and suffix coefficient tables, so no subtraction is
    involved and positive inputs stay free of cancellation.
    """
    a = _as_vector(a)
    n = a.shape[-1]
    batch = a.shape[:-1]
    if k < 0:
        return np.zeros(batch + (n,))
    if k == 0:
        return np.ones(batch + (n,))
    prefix = np.zeros((n + 1,) + batch + (k + 1,))
    suffix = np.zeros((n + 1,) + batch + (k + 1,))
    prefix[0, ..., 0] = 1.0
    suffix[n, ..., 0] = 1.0
    for i in range(n):
        ai = a[..., i, None]
        prefix[i + 1] = prefix[i]
        prefix[i + 1][..., 1:] += ai * prefix[i][..., :-1]
    for i in range(n - 1, -1, -1):
        ai = a[..., i, None]
        suffix[i] = suffix[i + 1]
        suffix[i][..., 1:] += ai * suffix[i + 1][..., :-1]
    out = np.empty(batch + (n,))
    for i in range(n):
        left = prefix[i]
        right = suffix[i + 1][..., ::-1]
        out[..., i] = np.sum(left * right, axis=-1)
    return out


def gamma_k_member(lam, k):
    """True iff ``sigma_j(lam) > 0`` for every ``j = 1..k`` (strict)."""
    lam = _as_vector(lam)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    e = elementary_all(lam, k)
    return np.all(e[..., 1:] > 0, axis=-1)[()]


def a_k_i(a, k, i=None):
    """``A_k^i(a) = a_i sigma_{k-1;i}(a)``; all i when ``i`` is None."""
    a = _as_vector(a)
    vals = a * sigma_leave_one_out(a, k - 1)
    if i is None:
        return vals
    return vals[..., i][()]


def is_normalized(a, k, tol=NORMALIZATION_TOL):
    return np.abs(sigma(a, k) - 1.0) <= tol


def normalize(a, k):
    """Rescale positive ``a`` so that ``sigma_k(a) = 1`` (degree-k homogeneity)."""
    a = _as_vector(a)
    if np.any(a <= 0):
        raise DomainError("normalization needs strictly positive entries")
    s = sigma(a, k)
    return a / np.power(s, 1.0 / k)[..., None]


def h_k(a, k):
    """``max_i A_k^i(a)`` for normalized ``a``."""
    a = _as_vector(a)
    if np.any(a <= 0):
        raise DomainError("h_k needs strictly positive entries")
    if not np.all(is_normalized(a, k)):
        raise DomainError("h_k bounds assume sigma_k(a) = 1; normalize first")
    return np.max(a_k_i(a, k), axis=-1)[()]


def newton_quotient_check(a, k, m, i, tol=NORMALIZATION_TOL):
    """Check ``sigma_m(a) sigma_{k-1;i}(a) >= sigma_{m-1;i}(a)`` for 1 <= m <= k-1."""
    a = _as_vector(a)
    if not 1 <= m <= k - 1:
        raise DomainError(f"inequality is stated for 1 <= m <= k-1, got m={m}, k={k}")
    if not np.all(is_normalized(a, k)):
        raise DomainError("a must satisfy sigma_k(a) = 1")
    lhs = sigma(a, m) * sigma_deleted(a, k - 1, [i])
    rhs = sigma_deleted(a, m - 1, [i])
    return np.asarray(lhs >= rhs - tol * np.maximum(1.0, np.abs(rhs)))[()]


def cstar(n, k):
    """``C(n,k)^(-1/k)``: the constant with ``c* (1,...,1)`` normalized."""
    return comb(n, k) ** (-1.0 / k)


def theta_of(n, k, hk):
    """Decay exponent ``((k/h_k) - 2) / (n - 2)``."""
    if n < 3:
        raise DomainError("theta needs n >= 3")
    return (k / hk - 2.0) / (n - 2.0)


@dataclass(frozen=True)
class AdmissibleMatrix:
    """Diagonal positive definite A, stored by its diagonal ``a``."""

    a: np.ndarray
    k: int
    normalized: bool = True

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if a.ndim != 1 or a.size < 2:
            raise DomainError("need a one-dimensional vector with n >= 2")
        if not 1 <= self.k <= a.size:
            raise DomainError(f"k={self.k} out of range for n={a.size}")
        if np.any(a <= 0):
            raise DomainError("A must be positive definite (all a_i > 0)")
        if self.normalized and not is_normalized(a, self.k):
            raise DomainError(f"sigma_k(a) = {sigma(a, self.k)!r}, expected 1")

    @classmethod
    def from_unnormalized(cls, a, k):
        return cls(normalize(a, k), k)

    @property
    def n(self):
        return self.a.size

    @property
    def matrix(self):
        return np.diag(self.a)


@dataclass(frozen=True)
class HessianParams:
    n: int
    k: int
    a: np.ndarray
    hk: float
    theta: float
    cstar: float

    @classmethod
    def from_vector(cls, a, k):
        A = a if isinstance(a, AdmissibleMatrix) else AdmissibleMatrix(a, k)
        n = A.n
        hk = float(h_k(A.a, k))
        theta = theta_of(n, k, hk) if n >= 3 else float("nan")
        return cls(n=n, k=k, a=A.a, hk=hk, theta=theta, cstar=cstar(n, k))

    @property
    def gamma(self):
        """Exponent ``k / (2 h_k)`` of the subsolution integrand."""
        return self.k / (2.0 * self.hk)


def random_admissible(rng, n, k, low=0.2, high=5.0, size=None):
    """Draw a_i uniform in [low, high] and rescale onto sigma_k(a) = 1."""
    shape = (n,) if size is None else (size, n)
    return normalize(rng.uniform(low, high, size=shape), k)
