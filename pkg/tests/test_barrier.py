import numpy as np
import pytest

from khessian.barrier import (
    MAX_DOUBLINGS,
    Envelope,
    build_barrier,
    default_xi_mesh,
    envelope_w,
    proof_constants,
    sample_exterior,
    sample_shell,
    sandwich,
)
from khessian.exceptions import ConvexityError, DomainError
from khessian.geometry import BoundaryData, EllipsoidDomain, Polynomial
from khessian.symfun import AdmissibleMatrix, cstar

ROT = np.array([[0.36, 0.48, -0.8], [-0.8, 0.6, 0.0], [0.48, 0.64, 0.6]])


@pytest.fixture(scope="module")
def problem():
    D = EllipsoidDomain([1.0, 0.75, 0.6], [0.1, -0.05, 0.0], ROT)
    A = AdmissibleMatrix.from_unnormalized([0.5, 1.0, 1.5], 2)
    H = np.array([[1.0, 0.3, 0.0], [0.3, -0.5, 0.0], [0.0, 0.0, 0.2]])
    phi = BoundaryData(D, Polynomial.from_quadratic(H, [0.2, 0.0, -0.1], 0.5))
    env = envelope_w(D, phi, A, default_xi_mesh(D))
    sbar = 2.0 * D.max_quadratic_level(A.a)
    pc = proof_constants(D, phi, A, sbar, envelope=env)
    return D, A, phi, env, pc


def test_ball_barrier_geometry():
    D = EllipsoidDomain.ball(3)
    A = AdmissibleMatrix(np.full(3, cstar(3, 2)), 2)
    phi = BoundaryData(D, Polynomial.constant(3, 0.0))
    xi = np.array([0.0, 0.0, 1.0])
    b = build_barrier(D, phi, A, xi)
    # zero data: xbar sits on the inward normal at distance t / c*
    assert np.allclose(b.xbar, xi - b.t / cstar(3, 2) * xi, atol=1e-15)
    assert b(xi) == 0.0
    pts = D.boundary_mesh(5000)
    pts = pts[np.linalg.norm(pts - xi, axis=1) > 1e-3]
    assert np.all(b(pts) < 0)


def test_barrier_touches_with_matching_tangent(problem, rng):
    D, A, phi, env, _ = problem
    for b in env.barriers[:20]:
        assert b(b.xi) == pytest.approx(phi.value(b.xi), abs=1e-14)
        grad_w = A.a * (b.xi - b.xbar)
        _, T = D.local_frame(b.xi)
        assert np.allclose(grad_w @ T, phi.grad(b.xi) @ T, atol=1e-12)


def test_barrier_separation_at_random_boundary_points(problem, rng):
    D, A, phi, env, _ = problem
    samples = D.random_boundary(rng, 10_000)
    for b in env.barriers[::12]:
        far = np.linalg.norm(samples - b.xi, axis=1) > 1e-6
        assert np.all(b.gap(phi, samples[far]) < 0)
        assert b.doublings <= MAX_DOUBLINGS


def test_offset_form_matches(problem, rng):
    _, A, _, env, _ = problem
    b = env.barriers[5]
    x = rng.normal(size=(30, 3))
    assert np.allclose(b(x), 0.5 * np.sum(A.a * x * x, axis=1) + x @ b.linear + b.offset, rtol=1e-12)


def test_barrier_rejects_interior_point(problem):
    D, A, phi, _, _ = problem
    with pytest.raises(DomainError):
        build_barrier(D, phi, A, D.center)


def test_barrier_reports_failed_separation(problem):
    D, A, phi, _, _ = problem
    xi = D.from_sphere(np.array([1.0, 0.0, 0.0]))
    # an absurd separation margin cannot be met within the doubling budget
    with pytest.raises(ConvexityError):
        build_barrier(D, phi, A, xi, eps_sep=1e30)


def test_single_barrier_envelope(problem, rng):
    _, _, _, env, _ = problem
    one = Envelope.of(env.barriers[:1])
    x = rng.normal(size=(100, 3))
    assert np.allclose(one(x), env.barriers[0](x), rtol=1e-12, atol=1e-12)
    with pytest.raises(DomainError):
        Envelope.of([])


def test_refined_envelope_is_larger(problem, rng):
    D, A, phi, _, _ = problem
    coarse = envelope_w(D, phi, A, D.boundary_mesh(16, kind="sobol"))
    fine = envelope_w(D, phi, A, D.boundary_mesh(64, kind="sobol"))
    x = sample_exterior(D, rng, 2000, rmax=5)
    assert np.all(fine(x) >= coarse(x) - 1e-12)


def test_ellipsoid_extremes_bracket_samples(problem, rng):
    _, A, _, env, _ = problem
    s = 1.3
    lo, hi = env.ellipsoid_extremes(s)
    z = rng.normal(size=(20000, 3))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    bnd = z * np.sqrt(2 * s / A.a)
    inner = bnd * rng.uniform(0, 1, (20000, 1)) ** (1 / 3)
    vals_b = 0.5 * np.sum(A.a * bnd**2, 1)[:, None] + bnd @ env.L.T + env.m
    vals_i = 0.5 * np.sum(A.a * inner**2, 1)[:, None] + inner @ env.L.T + env.m
    assert np.all(vals_b.max(axis=0) <= hi + 1e-12)
    assert np.all(vals_i.min(axis=0) >= lo - 1e-12)
    assert np.allclose(vals_b.max(axis=0), hi, rtol=0.02, atol=0.05)


def test_proof_constants_ordering(problem):
    D, A, phi, env, pc = problem
    xis = np.stack([b.xi for b in env.barriers])
    assert pc.beta <= np.min(phi.value(xis))
    assert pc.shat == 2 * pc.sbar
    assert pc.beta - pc.sbar < pc.cstar_threshold
    assert pc.cstar_threshold > pc.bhat
    rec = pc.to_record()
    assert rec["mu0"] == pc.beta - pc.sbar and rec["t_max"] > 0


def test_proof_constants_requires_containment(problem):
    D, A, phi, env, _ = problem
    with pytest.raises(DomainError):
        proof_constants(D, phi, A, 0.5 * D.max_quadratic_level(A.a), envelope=env)
    off = EllipsoidDomain.ball(3, 0.5, center=[2.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        proof_constants(off, BoundaryData(off, Polynomial.constant(3, 0.0)), A, 10.0)


def test_sandwich_properties(problem, rng):
    D, A, phi, env, pc = problem
    c = pc.cstar_threshold + 0.5
    pair = sandwich(D, phi, A, c, pc, rng, samples=100_000)
    assert pair.checks["ordering_samples"] == 100_000
    assert pair.checks["boundary_attainment"] <= 1e-12
    xis = np.stack([b.xi for b in env.barriers])
    assert np.allclose(pair.u_lower(xis), phi.value(xis), atol=1e-12)
    x = sample_exterior(D, rng, 5000)
    assert np.all(pair.u_lower(x) <= pair.u_upper(x))
    # along a ray the gap u_upper - u_lower shrinks toward zero
    ray = np.geomspace(10.0, 1e5, 9)[:, None] * np.array([[0.6, 0.0, 0.8]])
    gap = pair.u_upper(ray) - pair.u_lower(ray)
    assert np.all(gap >= 0) and np.all(np.diff(gap) < 0)
    assert gap[-1] < 0.05 * gap[0]


def test_sandwich_rejects_low_c(problem):
    D, A, phi, _, pc = problem
    with pytest.raises(DomainError):
        sandwich(D, phi, A, pc.cstar_threshold, pc)


def test_samplers(problem, rng):
    D, A, _, _, pc = problem
    x = sample_exterior(D, rng, 1000)
    assert np.all(D.level(x) >= 1.0)
    sh = sample_shell(D, A.a, pc.sbar, rng, 500)
    assert sh.shape == (500, 3)
    assert np.all(D.level(sh) > 1.0) and np.all(0.5 * np.sum(A.a * sh * sh, 1) <= pc.sbar)
