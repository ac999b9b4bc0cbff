import math
from itertools import combinations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240611))


def brute_sigma(a, k):
    """Sum over all k-subsets; the enumeration oracle for elementary symmetric functions."""
    if k < 0:
        return 0.0
    return math.fsum(math.prod(c) for c in combinations(list(a), k))


def brute_eigs(M):
    """LAPACK eigenvalues, independent of the package's Jacobi oracle."""
    return np.linalg.eigvalsh(np.asarray(M, dtype=float))


@pytest.fixture(scope="session")
def ball_problem():
    """Unit ball, zero data, A = c* I with n = 3, k = 2, and its sandwich."""
    from khessian.barrier import proof_constants, sandwich
    from khessian.geometry import BoundaryData, EllipsoidDomain, Polynomial
    from khessian.symfun import AdmissibleMatrix, cstar

    cs = cstar(3, 2)
    D = EllipsoidDomain.ball(3)
    phi = BoundaryData(D, Polynomial.constant(3, 0.0))
    A = AdmissibleMatrix(np.full(3, cs), 2)
    pc = proof_constants(D, phi, A, 0.35)
    c = pc.cstar_threshold + 0.5
    sw = sandwich(D, phi, A, c, pc, np.random.default_rng(0), samples=20_000)
    return {"D": D, "phi": phi, "A": A, "pc": pc, "c": c, "sw": sw, "cs": cs}


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Store one acceptance result; the terminal summary prints them in order."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
