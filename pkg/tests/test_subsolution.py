import numpy as np
import pytest
from scipy import integrate

from khessian.exceptions import DomainError
from khessian.symfun import HessianParams, cstar, normalize, random_admissible
from khessian.subsolution import (
    GeneralizedSubsolution,
    RadialSolution,
    alpha_of_c,
    asymptotic_fit,
    excess_between,
    excess_to_infinity,
    hessian_sigmas,
    mu_of_alpha,
    ode_residual,
    radial_two_point,
    random_instance,
    rigidity_falsifier,
    sample_points,
    tail_series,
    verify_subsolution,
)


def symmetric(n, k):
    return HessianParams.from_vector(np.full(n, cstar(n, k)), k)


def quad_omega(w, s):
    """scipy.quad of the raw profile derivative; the independent oracle."""
    f = lambda t: (1.0 + w.alpha * t ** (-w.gamma)) ** (1.0 / w.k)
    val, _ = integrate.quad(f, w.sbar, s, epsabs=0, epsrel=1e-13, limit=200)
    return w.beta + val


def quad_excess(gamma, k, alpha, lo, hi=np.inf):
    """Adaptive quadrature of the excess in x = log t, with a cancellation-free integrand."""
    f = lambda x: np.expm1(np.log1p(alpha * np.exp(-gamma * x)) / k) * np.exp(x)
    # e^700 stands in for infinity: the remaining tail is below e^(-700 (gamma - 1))
    val, _ = integrate.quad(f, np.log(lo), min(np.log(hi), 700.0), epsabs=0, epsrel=1e-13, limit=400)
    return val


def quad_mu(params, alpha, beta, sbar):
    return beta - sbar + quad_excess(params.gamma, params.k, alpha, sbar)


@pytest.fixture
def member_32():
    a = normalize(np.array([0.6, 1.0, 1.5]), 2)
    return GeneralizedSubsolution(HessianParams.from_vector(a, 2), alpha=3.0, beta=0.25, sbar=1.0)


def test_omega_against_quadrature(member_32):
    w = member_32
    assert w(1.0) == pytest.approx(0.25, abs=1e-15)
    for s in (0.05, 0.5, 4.0, 37.0, 1e3):
        assert abs(w(s) - quad_omega(w, s)) <= 1e-9 * max(1.0, abs(w(s)))


def test_omega_vectorised(member_32):
    s = np.geomspace(1e-2, 1e4, 50)
    assert np.allclose(member_32(s), [member_32(v) for v in s], rtol=1e-14)


def test_derivatives_against_finite_differences(member_32):
    w = member_32
    for s in (0.1, 1.0, 10.0):
        h = 1e-5 * s
        fd1 = (w(s + h) - w(s - h)) / (2 * h)
        fd2 = (w.d1(s + h) - w.d1(s - h)) / (2 * h)
        assert fd1 == pytest.approx(w.d1(s), rel=1e-8)
        assert fd2 == pytest.approx(w.d2(s), rel=1e-7)


def test_profile_ode_residual(rng):
    for _ in range(20):
        w = random_instance(rng, int(rng.integers(3, 6)), 2)
        s = np.geomspace(1e-2, 1e4, 200)
        assert np.max(np.abs(ode_residual(w, s))) <= 1e-12 * np.max(w.d1(s) ** w.k)


def test_profile_rejects_nonpositive_s(member_32):
    with pytest.raises(DomainError):
        member_32(0.0)
    with pytest.raises(DomainError):
        GeneralizedSubsolution(member_32.params, -1.0)


def test_mu_at_zero_and_monotone():
    p = symmetric(4, 2)
    assert mu_of_alpha(p, 0.0, 0.3, 2.0) == pytest.approx(0.3 - 2.0, abs=1e-15)
    mus = [mu_of_alpha(p, a, 0.3, 2.0) for a in (0.0, 0.1, 1.0, 10.0, 100.0)]
    assert np.all(np.diff(mus) > 0)


def test_mu_against_quadrature(rng):
    for _ in range(10):
        n = int(rng.integers(3, 6))
        k = int(rng.integers(2, n + 1))
        p = HessianParams.from_vector(random_admissible(rng, n, k), k)
        alpha, beta, sbar = float(rng.uniform(0.1, 10)), float(rng.normal()), float(rng.uniform(0.5, 2))
        assert mu_of_alpha(p, alpha, beta, sbar) == pytest.approx(quad_mu(p, alpha, beta, sbar), rel=1e-8, abs=1e-8)


def test_tail_series_against_quadrature():
    gamma, k, alpha, T = 1.5, 2, 4.0, 100.0
    ref = quad_excess(gamma, k, alpha, T)
    val, bound = tail_series(gamma, k, alpha, T)
    assert val == pytest.approx(ref, rel=1e-11)
    assert bound < 1e-12
    with pytest.raises(DomainError):
        tail_series(gamma, k, alpha, 1.0)


def test_excess_to_infinity_needs_gamma_above_one():
    with pytest.raises(DomainError):
        excess_to_infinity(1.0, 2, 1.0, 1.0)
    assert excess_to_infinity(1.5, 2, 0.0, 1.0) == 0.0


def test_excess_between_is_additive():
    g, k, al = 1.7, 3, 2.0
    ab = excess_between(g, k, al, 0.3, np.array([5.0]))[0]
    bc = excess_between(g, k, al, 5.0, np.array([80.0]))[0]
    ac = excess_between(g, k, al, 0.3, np.array([80.0]))[0]
    assert ab + bc == pytest.approx(ac, rel=1e-13)


def test_alpha_of_c_round_trip(rng):
    p = HessianParams.from_vector(random_admissible(rng, 5, 3), 3)
    beta, sbar = 0.4, 1.2
    for c in beta - sbar + np.geomspace(1e-3, 50, 12):
        al = alpha_of_c(p, c, beta, sbar)
        assert abs(mu_of_alpha(p, al, beta, sbar) - c) <= 1e-8


def test_alpha_of_c_boundary_case():
    p = symmetric(3, 2)
    with pytest.raises(DomainError):
        alpha_of_c(p, 0.3 - 2.0, 0.3, 2.0)


def test_members_record_round_trip(rng):
    w = random_instance(rng, 5, 3)
    back = GeneralizedSubsolution.from_record(w.to_record())
    assert back.alpha == w.alpha and back.beta == w.beta and back.sbar == w.sbar
    assert back.mu == pytest.approx(w.mu, rel=1e-15)


def test_symmetric_member_is_exact_solution(rng):
    w = GeneralizedSubsolution(symmetric(4, 3), alpha=5.0, sbar=1.0)
    x = sample_points(rng, 4, 500)
    rep = verify_subsolution(w, x)
    assert rep.passed
    assert abs(rep.min_defect) <= 1e-12
    assert np.allclose(hessian_sigmas(w, x)[:, -1], 1.0, atol=1e-12)


def test_verify_asymmetric_member_has_slack(rng):
    a = normalize(np.array([0.3, 1.0, 2.0, 4.0]), 2)
    w = GeneralizedSubsolution(HessianParams.from_vector(a, 2), alpha=10.0, sbar=1.0)
    rep = verify_subsolution(w, sample_points(rng, 4, 1000))
    assert rep.passed
    assert rep.min_sigma_k >= 1.0 - 1e-12
    assert rep.max_route_gap <= 1e-10
    # equality holds on the axis of the largest A_k^i
    i = int(np.argmax(a * (np.sum(a) - a)))
    x = np.zeros(4)
    x[i] = 0.7
    assert hessian_sigmas(w, x)[0, -1] == pytest.approx(1.0, abs=1e-13)


def test_verify_reports_origin_sample(member_32):
    rep = verify_subsolution(member_32, np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    assert rep.skipped == 1 and rep.n_points == 1
    assert rep.notes


def test_sample_points_include_axes(rng):
    pts = sample_points(rng, 3, 10)
    assert pts.shape == (16, 3)
    axes = pts[10:]
    assert np.all(np.sum(axes != 0, axis=1) == 1)


def test_asymptotic_slope_symmetric():
    # n = 3, k = 2, symmetric: theta = 1, slope = (2 - n)/2
    w = GeneralizedSubsolution(symmetric(3, 2), alpha=2.0, sbar=1.0)
    fit = asymptotic_fit(w)
    assert not fit.indeterminate
    assert fit.slope == pytest.approx(-0.5, rel=0.02)
    w5 = GeneralizedSubsolution(symmetric(5, 5), alpha=2.0, sbar=1.0)
    assert asymptotic_fit(w5).slope == pytest.approx(-1.5, rel=0.02)


def test_asymptotic_fit_grid_rules():
    w = GeneralizedSubsolution(symmetric(3, 2), alpha=2.0, sbar=1.0)
    with pytest.raises(DomainError):
        asymptotic_fit(w, np.geomspace(1.0, 1e4, 10))
    with pytest.raises(DomainError):
        asymptotic_fit(w, np.geomspace(10.0, 1e2, 10))
    fit = asymptotic_fit(GeneralizedSubsolution(symmetric(3, 2), alpha=0.0, sbar=1.0))
    assert fit.indeterminate


def test_rigidity_examples():
    a = normalize(np.array([1.0, 2.0, 3.0]), 2)
    rep = rigidity_falsifier(a, 2)
    # A_2^i = a_i (sum a - a_i)
    A = a * (np.sum(a) - a)
    assert rep.spread == pytest.approx(A.max() - A.min(), rel=1e-13)
    assert rep.identity_residual <= 1e-14
    d = rep.witness["omega2_demanded"]
    assert d[0] != pytest.approx(d[1])
    assert np.allclose(rep.witness["sigma_k_at_demand"], 1.0, atol=1e-12)
    sym = rigidity_falsifier(np.full(4, cstar(4, 2)), 2)
    assert sym.spread <= 1e-12 and sym.witness is None and sym.entries_equal
    with pytest.raises(DomainError):
        rigidity_falsifier(a, 1)


def test_radial_solution_residual():
    for n in range(3, 7):
        for k in range(2, n + 1):
            r = RadialSolution(n, k, alpha=1.5)
            s = np.geomspace(1e-2, 1e4, 100)
            assert np.max(np.abs(r.ode_residual(s))) <= 1e-12 * np.max(r.d1(s) ** k)
            cs = r.d2_complex_step(s)
            assert np.max(np.abs(r.ode_residual(s, cs))) <= 1e-9 * np.max(r.d1(s) ** k)


def test_radial_two_point_hits_both_values():
    p = symmetric(3, 2)
    w = radial_two_point(p, 0.3, 0.0, 2.0, 3.0)
    assert w(0.3) == pytest.approx(0.0, abs=1e-14)
    assert w(2.0) == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(DomainError):
        radial_two_point(p, 0.3, 0.0, 2.0, 1.0)
