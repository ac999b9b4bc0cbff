import numpy as np
import pytest

from khessian.exceptions import DomainError
from khessian.geometry import EllipsoidDomain
from khessian.grid import (
    BEYOND,
    INNER,
    INTERIOR,
    OUTER,
    OUTSIDE,
    STENCIL_OFFSETS,
    assemble_hessian,
    build_grid,
    eigvals_sym3,
    sigma_k_components,
    sigma_k_gradient,
)
from khessian.subsolution import GeneralizedSubsolution
from khessian.symfun import HessianParams, cstar, normalize

from conftest import brute_eigs

ROT = np.array([[0.36, 0.48, -0.8], [-0.8, 0.6, 0.0], [0.48, 0.64, 0.6]])
H0 = np.array([[0.9, 0.2, -0.1], [0.2, 0.6, 0.3], [-0.1, 0.3, 0.4]])


def quadratic(x):
    x = np.asarray(x)
    return 0.5 * np.einsum("...i,ij,...j->...", x, H0, x) + x @ [0.1, -0.3, 0.2] + 1.0


@pytest.fixture(scope="module")
def tilted_grid():
    D = EllipsoidDomain([1.0, 0.75, 0.6], [0.1, -0.05, 0.0], ROT)
    a = normalize(np.array([0.5, 1.0, 1.5]), 2)
    return build_grid(D, a, 3.0, 0.2)


def as_components(H):
    return np.array([H[0, 0], H[1, 1], H[2, 2], H[0, 1], H[0, 2], H[1, 2]])


def test_tags_partition_the_lattice(tilted_grid):
    g = tilted_grid
    X = g.points()
    t = g.tags.reshape(-1)
    lev = g.D.level(X)
    s = g.s_of(X)
    assert np.all(lev[t == OUTSIDE] < 1.0)
    assert np.all((lev[t == INTERIOR] > 1.0) & (s[t == INTERIOR] < g.S_out))
    assert np.all(s[t == BEYOND] > g.S_out)
    assert g.n_unknowns == np.sum(t == INTERIOR)
    # boundary nodes take their data on the boundary they hug
    bi = g.boundary_point[t == INNER]
    bo = g.boundary_point[t == OUTER]
    assert np.allclose(g.D.level(bi), 1.0, atol=1e-12)
    assert np.allclose(g.s_of(bo), g.S_out, rtol=1e-12)


def test_grid_validation():
    with pytest.raises(DomainError):
        build_grid(EllipsoidDomain.ball(3), np.ones(3), 0.4, 0.2)
    with pytest.raises(DomainError):
        build_grid(EllipsoidDomain.ball(2), np.ones(2), 4.0, 0.2)


def test_quadratics_are_differentiated_exactly(tilted_grid):
    g = tilted_grid
    dh = assemble_hessian(g, quadratic, quadratic)
    u = quadratic(g.points(g.interior))
    H = dh.hessian(u)
    assert np.max(np.abs(H - as_components(H0))) <= 1e-9


def test_trace_is_seven_point_laplacian(tilted_grid):
    g = tilted_grid
    dh = assemble_hessian(g, quadratic, quadratic)
    L = (dh.M[0] + dh.M[1] + dh.M[2]).tocsr()
    h2 = g.h**2
    nbrs = [g.flat_offset(o) for o in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]]
    tags = g.tags.reshape(-1)
    full = np.all([tags[g.interior + o] == INTERIOR for o in nbrs], axis=0)
    row = int(np.flatnonzero(full)[0])
    r = L.getrow(row)
    assert r.nnz == 7
    assert L[row, row] == pytest.approx(-6 / h2)
    for o in nbrs:
        assert L[row, g.unknown[g.interior[row] + o]] == pytest.approx(1 / h2)


def test_sigma_k_components_against_eigenvalues(rng):
    B = rng.normal(size=(200, 3, 3))
    S = B + B.transpose(0, 2, 1)
    comps = np.stack([S[:, 0, 0], S[:, 1, 1], S[:, 2, 2], S[:, 0, 1], S[:, 0, 2], S[:, 1, 2]], -1)
    lam = brute_eigs(S)
    assert np.allclose(eigvals_sym3(comps), lam, atol=1e-12)
    refs = [lam.sum(1), lam[:, 0] * lam[:, 1] + lam[:, 0] * lam[:, 2] + lam[:, 1] * lam[:, 2], lam.prod(1)]
    for k in (1, 2, 3):
        assert np.allclose(sigma_k_components(comps, k), refs[k - 1], rtol=1e-11, atol=1e-11)
    with pytest.raises(DomainError):
        sigma_k_components(comps, 4)


def test_sigma_k_gradient_by_finite_differences(rng):
    H = rng.normal(size=6)
    for k in (1, 2, 3):
        g = sigma_k_gradient(H, k)
        fd = np.array([(sigma_k_components(H + 1e-6 * e, k) - sigma_k_components(H - 1e-6 * e, k)) / 2e-6
                       for e in np.eye(6)])
        assert np.allclose(g, fd, atol=1e-8)


def test_eigvals_of_multiple_eigenvalue():
    assert np.allclose(eigvals_sym3(np.array([2.0, 2.0, 2.0, 0, 0, 0])), [2, 2, 2])


def test_subsolution_is_consistent_on_the_grid():
    """Discrete sigma_2 of the exact radial solution tends to 1.

    Rows with the full 19-point stencil converge at second order (measured in
    a fixed band so the comparison is between the same region); rows that
    use a ghost value carry the O(h) truncation of quadratic extrapolation.
    """
    cs = cstar(3, 2)
    w = GeneralizedSubsolution(HessianParams.from_vector(np.full(3, cs), 2), alpha=0.5, sbar=0.3)
    D = EllipsoidDomain.ball(3)
    band, ghost = [], []
    for h in (0.1, 0.05):
        g = build_grid(D, np.full(3, cs), 0.5 * cs * 4.0, h)
        dh = assemble_hessian(g, w.at_points, w.at_points)
        X = g.points(g.interior)
        err = np.abs(sigma_k_components(dh.hessian(w.at_points(X)), 2) - 1.0)
        tags = g.tags.reshape(-1)
        full = np.all([~np.isin(tags[g.interior + g.flat_offset(o)], (OUTSIDE, BEYOND))
                       for o in STENCIL_OFFSETS], axis=0)
        r = np.linalg.norm(X, axis=1)
        band.append(err[full & (r > 1.3) & (r < 1.7)].max())
        ghost.append(err[~full].max())
    assert band[0] / band[1] >= 3.2
    assert ghost[0] / ghost[1] >= 1.5
