"""Spectra of diagonal-plus-rank-one matrices and a Jacobi eigenvalue oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .symfun import elementary_all, sigma, sigma_leave_one_out


@dataclass(frozen=True)
class RankOneMatrix:
    """``M_ij = p_i delta_ij - beta q_i q_j``.

    ``p`` and ``q`` may carry leading batch axes; ``beta`` broadcasts
    against them.  Hessians of concave-in-s profiles give ``beta >= 0``.
    """

    p: np.ndarray
    q: np.ndarray
    beta: float | np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise DomainError(f"p and q shapes differ: {p.shape} vs {q.shape}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    @property
    def n(self):
        return self.p.shape[-1]

    def dense(self):
        eye = np.eye(self.n)
        b = self.beta[..., None, None]
        return self.p[..., :, None] * eye - b * (self.q[..., :, None] * self.q[..., None, :])


def sigma_k_rank_one(M: RankOneMatrix, k: int):
    """``sigma_k(lambda(M)) = sigma_k(p) - beta * sum_i q_i^2 sigma_{k-1;i}(p)``."""
    if not 1 <= k <= M.n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={M.n}")
    deleted = sigma_leave_one_out(M.p, k - 1)
    return (sigma(M.p, k) - M.beta * np.sum(M.q**2 * deleted, axis=-1))[()]


def char_poly_rank_one(M: RankOneMatrix):
    """Coefficients of ``det(lambda I - M)``, highest power first (length n+1).

    The coefficient of ``lambda^(n-i)`` is
    ``(-1)^i (sigma_i(p) - beta sum_j q_j^2 sigma_{i-1;j}(p))``.
    """
    n = M.n
    e = elementary_all(M.p, n)
    coeffs = np.empty(M.p.shape[:-1] + (n + 1,))
    coeffs[..., 0] = 1.0
    for i in range(1, n + 1):
        corr = np.sum(M.q**2 * sigma_leave_one_out(M.p, i - 1), axis=-1)
        coeffs[..., i] = (-1) ** i * (e[..., i] - M.beta * corr)
    return coeffs


def eigen_oracle(M, tol=1e-12, max_sweeps=60, return_vectors=False):
    """Eigenvalues of symmetric matrices by cyclic Jacobi rotations.

    Accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``; the stack
    is rotated in lock-step.  Sweeps stop once the off-diagonal Frobenius
    norm of every matrix is below ``tol * ||M||_F``.  Eigenvalues come back
    ascending; with ``return_vectors`` the columns of the second result are
    the matching eigenvectors.
    """
    A = np.array(M, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DomainError(f"expected square matrices, got shape {A.shape}")
    n = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape((-1, n, n))
    scale = np.max(np.abs(A), axis=(1, 2), initial=0.0)
    if np.any(np.abs(A - A.transpose(0, 2, 1)) > 1e-13 * np.maximum(scale, 1e-300)[:, None, None]):
        raise DomainError("matrix is not symmetric")
    A = 0.5 * (A + A.transpose(0, 2, 1))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    fro = np.sqrt(np.sum(A**2, axis=(1, 2)))
    offmask = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[:, offmask] ** 2, axis=1))
        if np.all(off <= tol * fro):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                if not np.any(apq):
                    continue
                app = A[:, p, p]
                aqq = A[:, q, q]
                nz = apq != 0.0
                # a tiny apq can send theta (and the denominator) to inf, which gives t = 0
                with np.errstate(over="ignore"):
                    theta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
                    t = np.where(nz, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
                t = np.where(nz & (theta == 0.0), 1.0, t)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cc = c[:, None]
                ss = s[:, None]
                colp = A[:, :, p].copy()
                colq = A[:, :, q].copy()
                A[:, :, p] = cc * colp - ss * colq
                A[:, :, q] = ss * colp + cc * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :].copy()
                A[:, p, :] = cc * rowp - ss * rowq
                A[:, q, :] = ss * rowp + cc * rowq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                vp = V[:, :, p].copy()
                vq = V[:, :, q].copy()
                V[:, :, p] = cc * vp - ss * vq
                V[:, :, q] = ss * vp + cc * vq

    w = np.diagonal(A, axis1=1, axis2=2)
    order = np.argsort(w, axis=1)
    w = np.take_along_axis(w, order, axis=1).reshape(batch + (n,))
    if not return_vectors:
        return w
    V = np.take_along_axis(V, order[:, None, :], axis=2).reshape(batch + (n, n))
    return w, V


def hessian_of_generalized(omega1, omega2, a, x):
    """Hessian of ``omega(0.5 * sum a_i x_i^2)`` as a rank-one update of a diagonal.

    ``D_ij omega = omega' a_i delta_ij + omega'' (a_i x_i)(a_j x_j)``, i.e.
    ``p = omega' a``, ``q = a x`` and ``beta = -omega''``.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    omega1 = np.asarray(omega1, dtype=float)
    omega2 = np.asarray(omega2, dtype=float)
    return RankOneMatrix(p=omega1[..., None] * a, q=a * x, beta=-omega2)


def sigma_k_generalized(omega1, omega2, a, x, k):
    """``sigma_k(a) w'^k + w'' w'^(k-1) sum_i sigma_{k-1;i}(a) (a_i x_i)^2``."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    omega1 = np.asarray(omega1, dtype=float)
    omega2 = np.asarray(omega2, dtype=float)
    weights = np.sum(sigma_leave_one_out(a, k - 1) * (a * x) ** 2, axis=-1)
    return (sigma(a, k) * omega1**k + omega2 * omega1 ** (k - 1) * weights)[()]


def sigma_of_eigenvalues(M, k):
    """Oracle route: ``sigma_k`` of the Jacobi eigenvalues of a dense matrix."""
    return sigma(eigen_oracle(M), k)
