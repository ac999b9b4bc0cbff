import numpy as np
import pytest

from khessian.exceptions import DomainError
from khessian.spectral import (
    RankOneMatrix,
    char_poly_rank_one,
    eigen_oracle,
    hessian_of_generalized,
    sigma_k_generalized,
    sigma_k_rank_one,
    sigma_of_eigenvalues,
)
from khessian.symfun import a_k_i, random_admissible, sigma

from conftest import brute_eigs


def test_rank_one_trace_example():
    M = RankOneMatrix([1.0, 1.0], [1.0, 0.0], 1.0)
    assert sigma_k_rank_one(M, 1) == 1.0
    assert np.array_equal(M.dense(), np.diag([0.0, 1.0]))


def test_beta_zero_is_diagonal(rng):
    p = rng.normal(size=5)
    M = RankOneMatrix(p, rng.normal(size=5), 0.0)
    for k in range(1, 6):
        assert sigma_k_rank_one(M, k) == pytest.approx(sigma(p, k), rel=1e-14)


def test_rank_one_against_lapack(rng):
    for _ in range(300):
        n = 6
        M = RankOneMatrix(rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(-2, 2))
        lam = brute_eigs(M.dense())
        for k in range(1, n + 1):
            ref = sigma(lam, k)
            assert abs(sigma_k_rank_one(M, k) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_rank_one_k_range():
    M = RankOneMatrix([1.0, 2.0], [0.0, 1.0], 1.0)
    with pytest.raises(DomainError):
        sigma_k_rank_one(M, 3)
    with pytest.raises(DomainError):
        RankOneMatrix([1.0, 2.0], [1.0], 1.0)


def test_dense_is_exact():
    p = np.array([0.1, 0.7, 3.0])
    q = np.array([0.3, -1.1, 0.9])
    M = RankOneMatrix(p, q, 0.37).dense()
    ref = np.diag(p) - 0.37 * np.outer(q, q)
    assert np.array_equal(M, ref)
    assert np.array_equal(M, M.T)


def test_char_poly_two_by_two(rng):
    # det(lam I - M) = (lam-p1)(lam-p2) + beta [q1^2 (lam-p2) + q2^2 (lam-p1)]
    for _ in range(20):
        p, q, beta, lam = rng.normal(size=2), rng.normal(size=2), rng.normal(), rng.normal()
        c = char_poly_rank_one(RankOneMatrix(p, q, beta))
        ref = (lam - p[0]) * (lam - p[1]) + beta * (q[0] ** 2 * (lam - p[1]) + q[1] ** 2 * (lam - p[0]))
        assert np.polyval(c, lam) == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_char_poly_diagonal_case(rng):
    p = rng.normal(size=4)
    c = char_poly_rank_one(RankOneMatrix(p, np.zeros(4), 1.0))
    assert np.allclose(c, np.poly(p), rtol=1e-13, atol=1e-13)


def test_char_poly_matches_oracle_roots(rng):
    for _ in range(50):
        M = RankOneMatrix(rng.normal(size=5), rng.normal(size=5), rng.normal())
        c = char_poly_rank_one(M)
        ref = np.poly(brute_eigs(M.dense()))
        assert np.allclose(c, ref, rtol=1e-10, atol=1e-10)
        fro = np.linalg.norm(M.dense())
        assert np.max(np.abs(np.polyval(c, eigen_oracle(M.dense())))) <= 1e-8 * (1 + fro) ** 5


def test_one_dimensional_extension():
    M = RankOneMatrix([2.0], [3.0], 0.5)
    assert sigma_k_rank_one(M, 1) == pytest.approx(2.0 - 0.5 * 9.0)
    assert np.allclose(char_poly_rank_one(M), [1.0, -(2.0 - 4.5)])


def test_eigen_oracle_examples():
    assert np.allclose(eigen_oracle(np.eye(3)), [1, 1, 1])
    assert np.allclose(eigen_oracle(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    assert np.allclose(eigen_oracle(np.diag([2.0, 2.0]) - np.outer([1, 0], [1, 0])), [1, 2])
    with pytest.raises(DomainError):
        eigen_oracle(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eigen_oracle_against_lapack(rng):
    B = rng.normal(size=(200, 7, 7))
    S = B + B.transpose(0, 2, 1)
    w, V = eigen_oracle(S, return_vectors=True)
    assert np.allclose(w, np.linalg.eigvalsh(S), rtol=1e-12, atol=1e-12)
    recon = V @ (w[..., None] * V.transpose(0, 2, 1))
    assert np.allclose(recon, S, atol=1e-11)


def test_eigen_oracle_tiny_couplings_quietly():
    M = np.diag([1.0, 2.0, 3.0])
    M[0, 1] = M[1, 0] = 1e-310
    # underflow of the squared coupling is harmless and silent by default
    with np.errstate(over="raise", divide="raise", invalid="raise"):
        assert np.allclose(eigen_oracle(M), [1, 2, 3])


def test_hessian_of_generalized_examples(rng):
    a = rng.uniform(0.2, 2.0, 4)
    x = rng.normal(size=4)
    assert np.allclose(hessian_of_generalized(1.0, 0.0, a, x).dense(), np.diag(a))
    assert np.allclose(hessian_of_generalized(2.5, -1.0, a, np.zeros(4)).dense(), 2.5 * np.diag(a))
    H = hessian_of_generalized(1.3, -0.4, a, x)
    ref = 1.3 * np.diag(a) - 0.4 * np.outer(a * x, a * x)
    assert np.allclose(H.dense(), ref, rtol=1e-15)
    assert float(H.beta) == 0.4


def test_generalized_formula_chain(rng):
    for _ in range(200):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n + 1))
        a = rng.uniform(0.2, 3.0, n)
        x = rng.normal(size=n)
        w1, w2 = rng.uniform(0.5, 3.0), rng.uniform(-2.0, 0.5)
        direct = sigma_k_generalized(w1, w2, a, x, k)
        via = sigma_k_rank_one(hessian_of_generalized(w1, w2, a, x), k)
        assert abs(direct - via) <= 1e-12 * max(1.0, abs(via))
        assert abs(direct - sigma_of_eigenvalues(hessian_of_generalized(w1, w2, a, x).dense(), k)) \
            <= 1e-10 * max(1.0, abs(direct))


def test_generalized_on_quadratic_and_axis(rng):
    a = random_admissible(rng, 5, 3)
    assert sigma_k_generalized(1.0, 0.0, a, rng.normal(size=5), 3) == pytest.approx(1.0, rel=1e-13)
    s, w1, w2 = 0.8, 1.7, -0.3
    for i in range(5):
        x = np.zeros(5)
        x[i] = np.sqrt(2 * s / a[i])
        expect = w1**3 + 2 * s * w2 * w1**2 * a_k_i(a, 3, i)
        assert sigma_k_generalized(w1, w2, a, x, 3) == pytest.approx(expect, rel=1e-13)
