"""Damped Newton solver for ``sigma_k(lambda(D^2 u)) = 1`` on the truncated exterior.

Iterates start at the lower sandwich function and are clamped into
``[u_lower, u_upper]`` after every step.  A pseudo-transient phase is
followed by Newton steps with Armijo backtracking on the residual 2-norm.
Every trial step must also keep the lower symmetric functions
``sigma_1 .. sigma_{k-1}`` positive wherever they already were, which keeps
the iteration off the non-admissible branches of ``sigma_k = 1``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DomainError
from .geometry import EllipsoidDomain
from .grid import (
    THETA_MIN,
    AnnularGrid,
    DiscreteHessian,
    assemble_hessian,
    eigvals_sym3,
    sigma_k_components,
    sigma_k_gradient,
)
from .symfun import AdmissibleMatrix, elementary_all, theta_of

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 2.0**-20
DIRECT_LIMIT = 8_000
DT_NEWTON = 1e8


def linear_solve(J, rhs, rtol=1e-11):
    """Sparse solve: LU on small systems, GMRES with a classical AMG preconditioner on large ones.

    Classical (Ruge-Stuben) coarsening copes with the nonsymmetric ghost rows
    far better than smoothed aggregation does on these Jacobians.

    Returns ``(x, info)``; ``info`` describes the route and any failure.
    """
    J = sp.csr_matrix(J)
    if J.shape[0] <= DIRECT_LIMIT:
        try:
            lu = spla.splu(J.tocsc())
        except RuntimeError as exc:  # exactly singular
            return None, {"route": "lu", "error": str(exc)}
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            return None, {"route": "lu", "error": "non-finite solution"}
        return x, {"route": "lu"}
    import pyamg

    ml = pyamg.ruge_stuben_solver(J, max_coarse=500)
    M = ml.aspreconditioner(cycle="V")
    res = []
    x, info = spla.gmres(J, rhs, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=10,
                         callback=lambda r: res.append(r), callback_type="pr_norm")
    out = {"route": "amg-gmres", "iterations": len(res)}
    if info != 0 or not np.all(np.isfinite(x)):
        out["error"] = f"gmres info={info}"
        rel = np.linalg.norm(J @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        out["relative_residual"] = float(rel)
        if not np.all(np.isfinite(x)) or rel > 1e-6:
            return None, out
    return x, out


@dataclass
class GridField:
    """Values on the lattice: unknowns, Dirichlet data, nan inside the obstacle."""

    grid: AnnularGrid
    values: np.ndarray
    hessian: Optional[DiscreteHessian] = field(default=None, repr=False)

    @property
    def interior_values(self):
        return self.values.reshape(-1)[self.grid.interior]

    @property
    def interior_points(self):
        return self.grid.points(self.grid.interior)

    def to_table(self):
        """Columns (x, y, z, value, tag) for every non-obstacle node."""
        tags = self.grid.tags.reshape(-1)
        keep = np.flatnonzero(np.isfinite(self.values.reshape(-1)))
        X = self.grid.points(keep)
        return np.column_stack([X, self.values.reshape(-1)[keep], tags[keep]])


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    final_residual: float
    converged: bool
    tol: float
    sandwich_violations: int
    clamped_nodes: int
    runtime: float
    n_unknowns: int
    gamma_k_ok: bool
    min_sigmas: list
    message: str = ""
    linear_info: list = field(default_factory=list)
    decay_slope: Optional[float] = None

    def to_record(self):
        d = dict(self.__dict__)
        d["residual_history"] = [float(r) for r in self.residual_history]
        d["min_sigmas"] = [float(v) for v in self.min_sigmas]
        return d


def discrete_sigma_k(dh: DiscreteHessian, u, k):
    """``sigma_k`` of the discrete Hessian at every unknown node."""
    return sigma_k_components(dh.hessian(u), k)


def discrete_gradient_of_sigma_k(dh: DiscreteHessian, u, k):
    """Jacobian of ``discrete_sigma_k`` with respect to the unknowns (sparse)."""
    T = sigma_k_gradient(dh.hessian(u), k)
    J = sp.diags(T[:, 0]) @ dh.M[0]
    for c in range(1, 6):
        J = J + sp.diags(T[:, c]) @ dh.M[c]
    return J.tocsr()


def gamma_k_monitor(H, k, tol=-1e-6):
    """Closed-form eigenvalues at every node; ``sigma_j >= tol`` for j = 1..k."""
    lam = eigvals_sym3(H)
    e = elementary_all(lam, k)[..., 1:]
    return bool(np.all(e >= tol)), [float(v) for v in np.min(e, axis=0)]


def lower_sigmas(H, k):
    """``sigma_1 .. sigma_{k-1}`` of the discrete Hessian, one column each."""
    return np.stack([sigma_k_components(H, j) for j in range(1, k)], axis=-1) if k > 1 \
        else np.zeros(H.shape[:-1] + (0,))


def _keeps_admissible(before, after):
    """No node with ``sigma_j > 0`` (j < k) before the step has ``sigma_j <= 0`` after it."""
    return not np.any((before > 0) & (after <= 0))


def _phi_callable(phi):
    return phi.value if hasattr(phi, "value") else phi


def solve(grid: AnnularGrid, A, k, phi, c, sandwich=None, outer: Optional[Callable] = None,
          initial: Optional[Callable] = None, tol=None, max_iter=500, clamp=True,
          pseudo_time=True, dt0=None):
    """Damped Newton on ``sigma_k(D_h^2 u) - 1 = 0`` with the sandwich clamp.

    ``outer`` supplies the Dirichlet data on the level set ``S_out``
    (default: ``omega_alpha(c)`` from the sandwich), ``initial`` the starting
    field (default: the lower sandwich function).
    """
    t_start = time.perf_counter()
    a = np.asarray(A.a if isinstance(A, AdmissibleMatrix) else A, dtype=float)
    if not np.allclose(a, grid.a):
        raise DomainError("grid was built for a different matrix")
    if sandwich is not None:
        if not c > sandwich.constants.cstar_threshold:
            raise DomainError(f"c = {c} is not above the threshold {sandwich.constants.cstar_threshold}")
        if abs(sandwich.c - c) > 1e-12 * (1 + abs(c)):
            raise DomainError("sandwich was built for a different c")
        if grid.S_out <= sandwich.constants.shat:
            raise DomainError("S_out must exceed shat so the outer data is omega_alpha(c)")
    if outer is None:
        if sandwich is None:
            raise DomainError("outer data needed when no sandwich is given")
        outer = sandwich.omega_at
    if initial is None:
        if sandwich is None:
            raise DomainError("initial field needed when no sandwich is given")
        initial = sandwich.u_lower
    tol = max(1e-8, grid.h**2) if tol is None else tol
    phi_v = _phi_callable(phi)
    dh = assemble_hessian(grid, phi_v, outer)
    X = grid.points(grid.interior)
    if sandwich is not None and clamp:
        lo = sandwich.u_lower(X)
        hi = sandwich.u_upper(X)
    else:
        lo = np.full(X.shape[0], -np.inf)
        hi = np.full(X.shape[0], np.inf)
    u = np.clip(initial(X), lo, hi)

    def residual(v):
        H = dh.hessian(v)
        return sigma_k_components(H, k) - 1.0, lower_sigmas(H, k)

    F, low = residual(u)
    hist = [float(np.max(np.abs(F)))]
    linfo = []
    msg = ""
    it = 0
    # Pseudo-transient phase: implicit steps of u_t = sigma_k(D^2 u) - 1, a
    # forward-parabolic flow whose steady state is the admissible solution.
    # The time step grows by switched evolution relaxation until it is
    # effectively infinite; from then on plain Armijo-damped Newton runs.
    dt = (grid.h**2 if dt0 is None else dt0) if pseudo_time else np.inf
    eye = sp.identity(u.size, format="csr")
    while hist[-1] > tol and it < max_iter:
        J = discrete_gradient_of_sigma_k(dh, u, k)
        transient = np.isfinite(dt)
        du, info = linear_solve(J - eye / dt if transient else J, -F)
        linfo.append(info)
        if du is None:
            if transient and dt > 1e-12 * grid.h**2:
                # a shorter pseudo-time step makes the system more diagonally dominant
                dt *= 0.25
                continue
            msg = f"linear solve failed at iteration {it}: {info.get('error')} (loss of ellipticity?)"
            break
        f0 = np.linalg.norm(F)
        if transient:
            ut = np.clip(u + du, lo, hi)
            Ft, lowt = residual(ut)
            f1 = np.linalg.norm(Ft)
            if not np.isfinite(f1) or f1 > 10.0 * f0 or not _keeps_admissible(low, lowt):
                dt *= 0.25
                if dt < 1e-12 * grid.h**2:
                    msg = f"pseudo-time step collapsed at iteration {it}"
                    break
                continue
            dt = dt * min(f0 / max(f1, 1e-300), 4.0)
            if dt > DT_NEWTON:
                dt = np.inf
        else:
            lam = 1.0
            while True:
                ut = np.clip(u + lam * du, lo, hi)
                Ft, lowt = residual(ut)
                if np.linalg.norm(Ft) <= (1.0 - ARMIJO * lam) * f0 and _keeps_admissible(low, lowt):
                    break
                lam *= 0.5
                if lam < MIN_STEP:
                    ut = None
                    break
            if ut is None:
                msg = f"line search stalled at iteration {it}"
                break
        u, F, low = ut, Ft, lowt
        it += 1
        hist.append(float(np.max(np.abs(F))))
        log.info("iteration %d: dt %.3g, residual %.3e", it, dt, hist[-1])
    converged = hist[-1] <= tol
    if not converged and not msg:
        msg = f"no convergence in {max_iter} iterations"
    H = dh.hessian(u)
    gk_ok, mins = gamma_k_monitor(H, k)
    viol = int(np.sum((u < lo - 1e-12) | (u > hi + 1e-12)))
    clamped = int(np.sum((u <= lo) | (u >= hi)))
    report = SolveReport(
        iterations=it,
        residual_history=hist,
        final_residual=hist[-1],
        converged=converged,
        tol=tol,
        sandwich_violations=viol,
        clamped_nodes=clamped,
        runtime=time.perf_counter() - t_start,
        n_unknowns=grid.n_unknowns,
        gamma_k_ok=gk_ok,
        min_sigmas=mins,
        message=msg,
        linear_info=linfo,
    )
    return GridField(grid, dh.field(u), dh), report


# -- harmonic upper barrier --------------------------------------------------------


@dataclass
class HarmonicField:
    grid: AnnularGrid
    values: np.ndarray  # full lattice, nan outside the annulus
    mask: np.ndarray  # unknown nodes of the annulus
    boundary_min: float
    boundary_max: float


def harmonic_upper_barrier(grid: AnnularGrid, sbar, phi, c, theta_min=THETA_MIN):
    """Discrete harmonic function on ``E(sbar) \\ D``: ``phi`` on D, ``sbar + c`` outside.

    Seven-point Laplacian with unequal arms (Shortley-Weller) at both
    boundaries, so the boundary data is imposed at the exact crossings.
    """
    phi_v = _phi_callable(phi)
    D = grid.D
    a = grid.a
    E = EllipsoidDomain(np.sqrt(2.0 * sbar / a))
    X = grid.points()
    levD = D.level(X)
    levE = E.level(X)
    top = sbar + c
    region = (levD > 1.0) & (levE < 1.0)
    Nn = 2 * grid.K + 1
    h = grid.h
    cand = np.flatnonzero(region)
    # arm lengths and end values per axis direction
    arms = {}
    dirichlet = np.zeros(cand.size, dtype=bool)
    dval = np.full(cand.size, np.nan)
    for i in range(3):
        for sgn in (1, -1):
            o = [0, 0, 0]
            o[i] = sgn
            q = cand + (o[0] * Nn + o[1]) * Nn + o[2]
            theta = np.ones(cand.size)
            val = np.full(cand.size, np.nan)
            node = region[q].copy()
            inD = levD[q] <= 1.0
            outE = levE[q] >= 1.0
            p0, p1 = X[cand], X[q]
            if np.any(inD):
                th = D.segment_crossing(p0[inD], p1[inD])
                theta[inD] = th
                val[inD] = phi_v(p0[inD] + th[:, None] * (p1[inD] - p0[inD]))
            if np.any(outE & ~inD):
                sel = outE & ~inD
                th = E.segment_crossing(p0[sel], p1[sel])
                theta[sel] = th
                val[sel] = top
            arms[(i, sgn)] = (q, theta, val, node)
            small = (~node) & (theta < theta_min)
            upd = small & ~dirichlet
            dirichlet |= small
            dval[upd] = val[upd]
    unk = cand[~dirichlet]
    index = np.full(X.shape[0], -1, dtype=np.int64)
    index[unk] = np.arange(unk.size)
    full = np.full(X.shape[0], np.nan)
    full[cand[dirichlet]] = dval[dirichlet]
    live = ~dirichlet
    rows, cols, vals = [], [], []
    rhs = np.zeros(unk.size)
    r_of = np.arange(unk.size)
    diag = np.zeros(unk.size)
    for i in range(3):
        qp, tp, vp, np_ = (v[live] for v in arms[(i, 1)])
        qm, tm, vm, nm = (v[live] for v in arms[(i, -1)])
        wp = 2.0 / (h * h * tp * (tp + tm))
        wm = 2.0 / (h * h * tm * (tp + tm))
        diag -= wp + wm
        for q, w, v, isnode in ((qp, wp, vp, np_), (qm, wm, vm, nm)):
            ju = isnode & (index[q] >= 0)
            rows.append(r_of[ju])
            cols.append(index[q[ju]])
            vals.append(w[ju])
            const = np.where(isnode & (index[q] < 0), full[q], v)
            b = ~ju
            rhs[b] -= w[b] * const[b]
    rows.append(r_of)
    cols.append(r_of)
    vals.append(diag)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(unk.size, unk.size))
    sol, info = linear_solve(L, rhs, rtol=1e-12)
    if sol is None:
        raise RuntimeError(f"harmonic solve failed: {info}")
    full[unk] = sol
    bvals = np.concatenate([arms[key][2][~arms[key][3]] for key in arms] + [dval[dirichlet]])
    bvals = bvals[np.isfinite(bvals)]
    mask = np.zeros(X.shape[0], dtype=bool)
    mask[unk] = True
    return HarmonicField(grid, full.reshape(grid.shape), mask.reshape(grid.shape),
                         float(bvals.min()), float(bvals.max()))


# -- far-field decay --------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    expected: float
    indeterminate: bool
    n_nodes: int
    r_range: tuple

    @property
    def rel_error(self):
        return abs(self.slope - self.expected) / abs(self.expected)


def decay_rate(u: GridField, A, c, k=None, floor_factor=10.0):
    """Log-log slope of ``|u_h - (x^T A x / 2 + c)|`` against ``|x|`` on the outer third."""
    grid = u.grid
    a = np.asarray(A.a if isinstance(A, AdmissibleMatrix) else A, dtype=float)
    kk = A.k if isinstance(A, AdmissibleMatrix) else k
    if kk is None:
        raise DomainError("k is needed to compute the expected exponent")
    from .symfun import h_k

    theta = theta_of(a.size, kk, float(h_k(a, kk)))
    expected = -theta * (a.size - 2)
    X = grid.points(grid.interior)
    vals = u.interior_values
    r = np.linalg.norm(X, axis=1)
    lo, hi = r.min(), r.max()
    sel = r >= lo + 2.0 * (hi - lo) / 3.0
    dev = np.abs(vals[sel] - (0.5 * np.sum(a * X[sel] ** 2, axis=1) + c))
    if sel.sum() < 3 or np.median(dev) < floor_factor * grid.h**2 or np.any(dev <= 0):
        return DecayFit(float("nan"), float("nan"), expected, True, int(sel.sum()), (float(lo), float(hi)))
    slope, icpt = np.polyfit(np.log(r[sel]), np.log(dev), 1)
    return DecayFit(float(slope), float(icpt), expected, False, int(sel.sum()),
                    (float(r[sel].min()), float(hi)))
