"""Cartesian lattice on ``E(S_out) \\ D`` in three dimensions and the discrete Hessian.

Node tags:

* ``OUTSIDE``: inside the open obstacle D (never an unknown);
* ``INTERIOR``: unknowns, strictly outside the closure of D and inside E(S_out);
* ``INNER``: Dirichlet nodes on, or within ``THETA_MIN * h`` of, the boundary of D;
* ``OUTER``: Dirichlet nodes on, or within ``THETA_MIN * h`` of, the level set ``S_out``;
* ``BEYOND``: nodes past the level ``S_out``, reached only through ghost values.

Each discrete Hessian entry is an affine function of the unknowns,
``H_c = M_c u + b_c``.  A stencil neighbour that falls inside D or beyond
``S_out`` is replaced by a ghost value, the quadratic through the opposite
neighbour, the node itself and the boundary crossing (with the boundary data
there), evaluated one step beyond the node.  Both boundaries are therefore
imposed where they really are, and the discrete problem is the truncated
problem on ``E(S_out) \\ D`` rather than a lattice approximation of it.
Convexity of D guarantees the opposite neighbour is never inside D.
Mixed derivatives use the 4-point cross where all four diagonal neighbours
are lattice nodes of the annulus, otherwise a 7-point formula built on the
available diagonal pair, so diagonal ghosts (which could destroy diagonal
dominance) are avoided whenever possible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from .exceptions import DomainError
from .geometry import EllipsoidDomain

OUTSIDE, INTERIOR, INNER, OUTER, BEYOND = 0, 1, 2, 3, 4
THETA_MIN = 1e-4

# component order of the symmetric 3x3 Hessian
COMPONENTS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _offset(i=0, di=0, j=None, dj=0):
    o = [0, 0, 0]
    o[i] += di
    if j is not None:
        o[j] += dj
    return tuple(o)


def _mixed_formulas(i, j):
    """Candidate mixed-derivative formulas in the (i, j) plane, with their needs.

    Each entry: (name, {offset: weight * h^2}, diagonal offsets that must lie outside D).
    """
    P = lambda a, b: _offset(i, a, j, b)
    axis = {P(1, 0): -1.0, P(-1, 0): -1.0, P(0, 1): -1.0, P(0, -1): -1.0}
    cross = {P(1, 1): 0.25, P(1, -1): -0.25, P(-1, 1): -0.25, P(-1, -1): 0.25}
    main7 = {P(1, 1): 0.5, P(-1, -1): 0.5, P(0, 0): 1.0, **{k: 0.5 * v for k, v in axis.items()}}
    anti7 = {P(1, -1): -0.5, P(-1, 1): -0.5, P(0, 0): -1.0, **{k: -0.5 * v for k, v in axis.items()}}
    half = [
        ("i+", {P(1, 1): 0.5, P(1, -1): -0.5, P(0, 1): -0.5, P(0, -1): 0.5}, [P(1, 1), P(1, -1)]),
        ("i-", {P(0, 1): 0.5, P(0, -1): -0.5, P(-1, 1): -0.5, P(-1, -1): 0.5}, [P(-1, 1), P(-1, -1)]),
        ("j+", {P(1, 1): 0.5, P(-1, 1): -0.5, P(1, 0): -0.5, P(-1, 0): 0.5}, [P(1, 1), P(-1, 1)]),
        ("j-", {P(1, 0): 0.5, P(-1, 0): -0.5, P(1, -1): -0.5, P(-1, -1): 0.5}, [P(1, -1), P(-1, -1)]),
    ]
    diag = [P(1, 1), P(1, -1), P(-1, 1), P(-1, -1)]
    return (
        [("cross", cross, diag), ("main7", main7, [P(1, 1), P(-1, -1)]),
         ("anti7", anti7, [P(1, -1), P(-1, 1)])]
        + half
        + [("ghost-cross", cross, [])]
    )


STENCIL_OFFSETS = sorted(
    {o for o in product((-1, 0, 1), repeat=3) if sum(map(abs, o)) in (1, 2)}
)


@dataclass
class AnnularGrid:
    """Lattice ``x = h * (i, j, k)``, ``|i|, |j|, |k| <= K``, tagged against D and ``E(S_out)``."""

    D: EllipsoidDomain
    a: np.ndarray
    S_out: float
    h: float
    K: int
    tags: np.ndarray
    coords1d: np.ndarray
    interior: np.ndarray = field(repr=False)  # flat indices of unknowns
    unknown: np.ndarray = field(repr=False)  # flat -> unknown index or -1
    boundary_point: np.ndarray = field(repr=False)  # where the data of each INNER/OUTER node is taken

    @property
    def shape(self):
        return (2 * self.K + 1,) * 3

    @property
    def n_unknowns(self):
        return self.interior.size

    def points(self, flat=None):
        I = np.unravel_index(np.arange(self.tags.size) if flat is None else flat, self.shape)
        return np.stack([self.coords1d[i] for i in I], axis=-1)

    def flat_offset(self, o):
        N = 2 * self.K + 1
        return (o[0] * N + o[1]) * N + o[2]

    def s_of(self, x):
        return 0.5 * np.sum(self.a * np.asarray(x) ** 2, axis=-1)

    @property
    def outer_domain(self):
        """The ellipsoid ``E(S_out)`` as a domain, for boundary crossings."""
        return EllipsoidDomain(np.sqrt(2.0 * self.S_out / self.a))


def build_grid(D: EllipsoidDomain, a, S_out, h, theta_min=THETA_MIN):
    if D.n != 3:
        raise DomainError("the grid solver is three-dimensional")
    a = np.asarray(a, dtype=float)
    if D.max_quadratic_level(a) >= S_out:
        raise DomainError("E(S_out) must contain the closure of D")
    E = EllipsoidDomain(np.sqrt(2.0 * S_out / a))
    R = np.sqrt(2.0 * S_out / a.min())
    K = int(np.ceil(R / h)) + 2
    c1 = h * np.arange(-K, K + 1)
    X = np.stack(np.meshgrid(c1, c1, c1, indexing="ij"), axis=-1).reshape(-1, 3)
    lev = D.level(X)
    # the outer side is classified with the same level function that computes
    # crossings, so a node and its crossing never disagree by a rounding error
    levE = E.level(X)
    tags = np.full(X.shape[0], OUTSIDE, dtype=np.int8)
    tags[(lev >= 1.0) & (levE < 1.0)] = INTERIOR
    tags[(lev == 1.0) & (levE < 1.0)] = INNER
    tags[levE == 1.0] = OUTER
    tags[levE > 1.0] = BEYOND
    boundary_point = np.full(X.shape, np.nan)
    on = (tags == INNER) | (tags == OUTER)
    boundary_point[on] = X[on]

    # nodes hugging either boundary become Dirichlet with data at the nearest crossing
    cand = np.flatnonzero(tags == INTERIOR)
    N = 2 * K + 1
    best = np.full(cand.size, np.inf)
    bpt = np.full((cand.size, 3), np.nan)
    btag = np.zeros(cand.size, dtype=np.int8)
    for o in STENCIL_OFFSETS:
        q = cand + (o[0] * N + o[1]) * N + o[2]
        for dom, mask, tag in ((D, lev[q] < 1.0, INNER), (E, levE[q] > 1.0, OUTER)):
            sel = np.flatnonzero(mask)
            if sel.size == 0:
                continue
            p0 = X[cand[sel]]
            p1 = X[q[sel]]
            tau = dom.segment_crossing(p0, p1)
            dist = tau * np.linalg.norm(p1 - p0, axis=1) / h
            upd = dist < best[sel]
            best[sel[upd]] = dist[upd]
            bpt[sel[upd]] = p0[upd] + tau[upd, None] * (p1[upd] - p0[upd])
            btag[sel[upd]] = tag
    hug = best < theta_min
    tags[cand[hug]] = btag[hug]
    boundary_point[cand[hug]] = bpt[hug]

    interior = np.flatnonzero(tags == INTERIOR)
    unknown = np.full(tags.size, -1, dtype=np.int64)
    unknown[interior] = np.arange(interior.size)
    return AnnularGrid(D, a, float(S_out), float(h), K, tags.reshape((N,) * 3), c1,
                       interior, unknown, boundary_point)


@dataclass
class LinearForm:
    """Per-row affine expression ``sum_m coef[:, m] * u[cols[:, m]] + const``."""

    cols: np.ndarray
    coef: np.ndarray
    const: np.ndarray

    def scaled(self, w):
        return LinearForm(self.cols, self.coef * w, self.const * w)


@dataclass
class DiscreteHessian:
    """``H_c = M[c] @ u + b[c]`` at the unknown nodes, c over ``COMPONENTS``."""

    grid: AnnularGrid
    M: list
    b: list
    dirichlet: np.ndarray  # full-lattice Dirichlet values (nan elsewhere)
    formula_counts: dict

    def hessian(self, u):
        return np.stack([self.M[c] @ u + self.b[c] for c in range(6)], axis=-1)

    def field(self, u):
        """Full-lattice array: unknowns from u, Dirichlet data elsewhere, nan inside D."""
        out = self.dirichlet.copy()
        out[self.grid.interior] = u
        return out.reshape(self.grid.shape)


def _value_forms(grid: AnnularGrid, phi_value, outer_value, dvals, X):
    """Resolve the value at every stencil offset of every unknown node to a LinearForm.

    Also returns, per offset, which rows use a ghost value there, and the
    number of rows where a ghost beyond ``S_out`` had no usable opposite
    neighbour and the outer data was evaluated at the lattice node instead.
    """
    P = grid.interior
    nP = P.size
    tags = grid.tags.reshape(-1)
    unk = grid.unknown
    forms = {}
    ghosted = {}
    fallback = 0
    self_form = LinearForm(np.stack([unk[P], -np.ones(nP, int), -np.ones(nP, int)], 1),
                           np.stack([np.ones(nP), np.zeros(nP), np.zeros(nP)], 1), np.zeros(nP))
    forms[(0, 0, 0)] = self_form
    E = grid.outer_domain
    for o in STENCIL_OFFSETS:
        fo = grid.flat_offset(o)
        Q = P + fo
        tq = tags[Q]
        cols = -np.ones((nP, 3), dtype=np.int64)
        coef = np.zeros((nP, 3))
        const = np.zeros(nP)
        isu = tq == INTERIOR
        cols[isu, 0] = unk[Q[isu]]
        coef[isu, 0] = 1.0
        isd = (tq == INNER) | (tq == OUTER)
        const[isd] = dvals[Q[isd]]
        ghosted[o] = (tq == OUTSIDE) | (tq == BEYOND)
        R = P - fo
        tr = tags[R]
        for tag, dom, data in ((OUTSIDE, grid.D, phi_value), (BEYOND, E, outer_value)):
            ins = np.flatnonzero(tq == tag)
            if ins.size == 0:
                continue
            bad = (tr[ins] == OUTSIDE) | (tr[ins] == BEYOND)
            if tag == OUTSIDE and np.any(bad):
                raise DomainError("opposite neighbour is not in the annulus; is D convex and h small enough?")
            if np.any(bad):
                # a sliver of E(S_out) thinner than 2h: use the data at the node itself
                far = ins[bad]
                const[far] = data(X[Q[far]])
                fallback += far.size
                ghosted[o][far] = False
                ins = ins[~bad]
                if ins.size == 0:
                    continue
            p0 = X[P[ins]]
            p1 = X[Q[ins]]
            th = dom.segment_crossing(p0, p1)
            if np.any(~np.isfinite(th)):
                raise DomainError("ghost neighbour without a boundary crossing")
            bpt = p0 + th[:, None] * (p1 - p0)
            Lm = (1 - th) / (1 + th)
            Lp = -2 * (1 - th) / th
            Lb = 2 / (th * (1 + th))
            Ri = R[ins]
            ru = tags[Ri] == INTERIOR
            cols[ins[ru], 0] = unk[Ri[ru]]
            coef[ins[ru], 0] = Lm[ru]
            const[ins[~ru]] += Lm[~ru] * dvals[Ri[~ru]]
            cols[ins, 1] = unk[P[ins]]
            coef[ins, 1] = Lp
            const[ins] += Lb * data(bpt)
        forms[o] = LinearForm(cols, coef, const)
    return forms, ghosted, fallback


def assemble_hessian(grid: AnnularGrid, phi_value, outer_value):
    """Discrete Hessian with Dirichlet data ``phi_value`` on D and ``outer_value`` on the level ``S_out``."""
    X = grid.points()
    tags = grid.tags.reshape(-1)
    dvals = np.full(tags.size, np.nan)
    for tag, data in ((INNER, phi_value), (OUTER, outer_value)):
        idx = np.flatnonzero(tags == tag)
        if idx.size:
            dvals[idx] = data(grid.boundary_point[idx])
    forms, ghosted, fallback = _value_forms(grid, phi_value, outer_value, dvals, X)
    nP = grid.interior.size
    h2 = grid.h**2
    M, b = [], []
    counts = {"outer-fallback": fallback}
    for (i, j) in COMPONENTS:
        rows_l, cols_l, vals_l = [], [], []
        const = np.zeros(nP)

        def add(mask, terms):
            nonlocal const
            r = np.flatnonzero(mask)
            if r.size == 0:
                return
            for o, w in terms.items():
                f = forms[o]
                c = f.cols[r]
                v = f.coef[r] * (w / h2)
                keep = c >= 0
                rows_l.append(np.broadcast_to(r[:, None], c.shape)[keep])
                cols_l.append(c[keep])
                vals_l.append(v[keep])
                const[r] += f.const[r] * (w / h2)

        if i == j:
            add(np.ones(nP, bool), {_offset(i, 1): 1.0, _offset(i, -1): 1.0, (0, 0, 0): -2.0})
        else:
            remaining = np.ones(nP, bool)
            for name, terms, needs in _mixed_formulas(i, j):
                ok = remaining.copy()
                for o in needs:
                    ok &= ~ghosted[o]
                add(ok, terms)
                counts[(i, j, name)] = int(ok.sum())
                remaining &= ~ok
        rows = np.concatenate(rows_l)
        cols = np.concatenate(cols_l)
        vals = np.concatenate(vals_l)
        M.append(sp.csr_matrix((vals, (rows, cols)), shape=(nP, nP)))
        b.append(const)
    return DiscreteHessian(grid, M, b, dvals, counts)


# -- pointwise algebra of the 3x3 Hessian -------------------------------------------------


def sigma_k_components(H, k):
    """``sigma_k`` of the eigenvalues of the symmetric matrices given by 6 components."""
    xx, yy, zz, xy, xz, yz = (H[..., c] for c in range(6))
    if k == 1:
        return xx + yy + zz
    if k == 2:
        return xx * yy + xx * zz + yy * zz - xy * xy - xz * xz - yz * yz
    if k == 3:
        return xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz)
    raise DomainError(f"k must be 1, 2 or 3 in three dimensions, got {k}")


def sigma_k_gradient(H, k):
    """Derivative of ``sigma_k_components`` with respect to the 6 components."""
    xx, yy, zz, xy, xz, yz = (H[..., c] for c in range(6))
    if k == 1:
        one = np.ones_like(xx)
        zero = np.zeros_like(xx)
        return np.stack([one, one, one, zero, zero, zero], axis=-1)
    if k == 2:
        return np.stack([yy + zz, xx + zz, xx + yy, -2 * xy, -2 * xz, -2 * yz], axis=-1)
    if k == 3:
        return np.stack([
            yy * zz - yz * yz, xx * zz - xz * xz, xx * yy - xy * xy,
            2 * (xz * yz - zz * xy), 2 * (xy * yz - yy * xz), 2 * (xy * xz - xx * yz),
        ], axis=-1)
    raise DomainError(f"k must be 1, 2 or 3 in three dimensions, got {k}")


def eigvals_sym3(H):
    """Closed-form (trigonometric) eigenvalues of symmetric 3x3 matrices, ascending."""
    xx, yy, zz, xy, xz, yz = (np.asarray(H[..., c], dtype=float) for c in range(6))
    p1 = xy * xy + xz * xz + yz * yz
    q = (xx + yy + zz) / 3.0
    p2 = (xx - q) ** 2 + (yy - q) ** 2 + (zz - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    b11, b22, b33 = (xx - q) / safe, (yy - q) / safe, (zz - q) / safe
    b12, b13, b23 = xy / safe, xz / safe, yz / safe
    detB = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13) + b13 * (b12 * b23 - b22 * b13)
    r = np.clip(detB / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    out = np.stack([e3, e2, e1], axis=-1)
    return np.where((p > 0)[..., None], out, q[..., None] * np.ones(3))
