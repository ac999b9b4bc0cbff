"""Verification suites behind the command-line subcommands.

Each suite takes a Generator and its size knobs and returns a
:class:`SuiteResult`: the number of contract violations, a JSON-ready
summary, and tables (header plus rows) for CSV output.  Tables never contain
timings, so equal seeds give identical tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .barrier import build_barrier, default_xi_mesh, proof_constants, sandwich
from .exceptions import ContractViolation, ConvexityError, DomainError
from .geometry import EllipsoidDomain
from .spectral import (
    RankOneMatrix,
    char_poly_rank_one,
    eigen_oracle,
    hessian_of_generalized,
    sigma_k_generalized,
    sigma_k_rank_one,
)
from .subsolution import (
    GeneralizedSubsolution,
    RadialSolution,
    alpha_of_c,
    asymptotic_fit,
    mu_of_alpha,
    ode_residual,
    random_instance,
    rigidity_falsifier,
    sample_points,
    verify_subsolution,
)
from .symfun import (
    AdmissibleMatrix,
    HessianParams,
    a_k_i,
    cstar,
    elementary_all,
    gamma_k_member,
    random_admissible,
    sigma,
    sigma_leave_one_out,
)

IDENTITY_TOL = 1e-12
ORACLE_TOL = 1e-13
RANK_ONE_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    violations: int
    summary: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)

    @property
    def passed(self):
        return self.violations == 0


def rel_err(x, ref):
    """Relative error, measured absolutely when the reference is below 1 in magnitude."""
    return np.abs(np.asarray(x) - ref) / np.maximum(1.0, np.abs(ref))


def subset_sigma(a, k):
    """Brute-force sum over k-subsets (the enumeration oracle)."""
    return math.fsum(math.prod(c) for c in combinations(a, k))


# -- symmetric functions -------------------------------------------------------------


def symcheck(rng, n, k, trials, oracle_trials=200):
    """Identities, Newton quotients, h_k bounds and cone monotonicity on random ``a``."""
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got n={n}, k={k}")
    a = random_admissible(rng, n, k, size=trials)
    sk = sigma(a, k)
    loo_k = sigma_leave_one_out(a, k)
    loo_k1 = sigma_leave_one_out(a, k - 1)
    split = np.max(rel_err(loo_k + a * loo_k1, sk[:, None]), axis=1)
    A = a_k_i(a, k)
    total = rel_err(np.sum(A, axis=1), k * sk)
    margin = np.full(trials, np.inf)
    for m in range(1, k):
        lhs = sigma(a, m)[:, None] * loo_k1
        rhs = sigma_leave_one_out(a, m - 1)
        margin = np.minimum(margin, np.min((lhs - rhs) / np.maximum(1.0, np.abs(rhs)), axis=1))
    hk = np.max(A, axis=1)
    spread = np.max(a, axis=1) - np.min(a, axis=1)
    if k <= n - 1:
        hk_ok = (hk >= k / n - IDENTITY_TOL) & (hk < 1.0)
        equal_case = np.abs(hk - k / n) <= IDENTITY_TOL
        hk_ok &= ~equal_case | (spread <= 1e-10)
    else:
        hk_ok = np.abs(hk - 1.0) <= IDENTITY_TOL
    # Newton's inequalities in quotient form: sigma_{j+1}/sigma_j is non-increasing
    e = elementary_all(a, n)
    quot = e[:, 1:] / e[:, :-1]
    mono = np.all(quot[:, 1:] <= quot[:, :-1] * (1 + IDENTITY_TOL), axis=1) if n > 1 else np.ones(trials, bool)

    m = min(trials, oracle_trials) if n <= 12 else 0
    oracle_gap = np.zeros(trials)
    for t in range(m):
        ref = np.array([subset_sigma(a[t], j) for j in range(n + 1)])
        oracle_gap[t] = np.max(np.abs(e[t] - ref) / np.abs(ref))

    lam = rng.normal(size=(trials, n))
    member = np.stack([gamma_k_member(lam, j) for j in range(1, n + 1)], axis=1)
    cone_ok = np.all(member[:, 1:] <= member[:, :-1], axis=1)
    pos = gamma_k_member(np.abs(lam) + 1e-3, n)

    bad = (
        (split > IDENTITY_TOL) | (total > IDENTITY_TOL) | (margin < -IDENTITY_TOL)
        | ~hk_ok | ~mono | (oracle_gap > ORACLE_TOL) | ~cone_ok
    )
    rows = [
        [t, split[t], total[t], margin[t] if k > 1 else float("nan"), hk[t], bool(hk_ok[t]),
         oracle_gap[t], bool(cone_ok[t])]
        for t in range(trials)
    ]
    summary = {
        "n": n, "k": k, "trials": trials,
        "max_split_identity_error": float(split.max()),
        "max_sum_identity_error": float(total.max()),
        "min_newton_quotient_margin": float(margin.min()) if k > 1 else None,
        "hk_range": [float(hk.min()), float(hk.max())],
        "max_oracle_error": float(oracle_gap.max()),
        "oracle_trials": m,
        "positive_orthant_in_gamma_n": bool(np.all(pos)),
    }
    header = ["trial", "split_identity_err", "sum_identity_err", "newton_margin", "hk", "hk_ok",
              "oracle_err", "cone_monotone"]
    return SuiteResult("symcheck", int(bad.sum()) + int(not np.all(pos)), summary, {"symcheck": (header, rows)})


# -- rank-one spectra --------------------------------------------------------------


def random_rank_one(rng, n):
    return RankOneMatrix(rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), float(rng.uniform(-2, 2)))


def identity_check(rng, trials, n_max=8):
    """Rank-one formula against Jacobi eigenvalues, plus the characteristic polynomial."""
    ns = rng.integers(2, n_max + 1, size=trials)
    ks = np.array([rng.integers(1, n + 1) for n in ns])
    mats = [random_rank_one(rng, int(n)) for n in ns]
    formula = np.empty(trials)
    oracle = np.empty(trials)
    poly_res = np.empty(trials)
    for n in np.unique(ns):
        idx = np.flatnonzero(ns == n)
        stack = RankOneMatrix(np.stack([mats[i].p for i in idx]), np.stack([mats[i].q for i in idx]),
                              np.array([float(mats[i].beta) for i in idx]))
        dense = stack.dense()
        lam = eigen_oracle(dense)
        e = elementary_all(lam, int(n))
        coeffs = char_poly_rank_one(stack)
        fro = np.sqrt(np.sum(dense**2, axis=(1, 2)))
        for j, i in enumerate(idx):
            k = int(ks[i])
            formula[i] = sigma_k_rank_one(mats[i], k)
            oracle[i] = e[j, k]
            vals = np.polyval(coeffs[j], lam[j])
            poly_res[i] = np.max(np.abs(vals)) / (1.0 + fro[j]) ** int(n)
    err = rel_err(formula, oracle)
    bad = (err > RANK_ONE_TOL) | (poly_res > 1e-8)

    # the generalized-Hessian chain on a smaller random set
    chain = []
    for _ in range(min(trials, 500)):
        n = int(rng.integers(2, n_max + 1))
        k = int(rng.integers(1, n + 1))
        a = rng.uniform(0.2, 3.0, n)
        x = rng.normal(size=n)
        w1, w2 = rng.uniform(0.5, 3.0), rng.uniform(-2.0, 0.5)
        direct = sigma_k_generalized(w1, w2, a, x, k)
        via = sigma_k_rank_one(hessian_of_generalized(w1, w2, a, x), k)
        chain.append(float(np.abs(direct - via) / max(1.0, abs(via))))
    chain = np.array(chain)
    rows = [[t, int(ns[t]), int(ks[t]), formula[t], oracle[t], err[t], poly_res[t]] for t in range(trials)]
    summary = {
        "trials": trials,
        "max_error": float(err.max()),
        "max_char_poly_residual": float(poly_res.max()),
        "max_chain_error": float(chain.max()),
    }
    violations = int(bad.sum()) + int(np.sum(chain > IDENTITY_TOL))
    header = ["trial", "n", "k", "formula", "oracle", "error", "char_poly_residual"]
    return SuiteResult("identity-check", violations, summary, {"rank_one": (header, rows)})


# -- subsolutions --------------------------------------------------------------------


def subsolution_verify(rng, trials, samples, extra=None):
    """Random family members (n in 3..5, 2 <= k <= n) plus any configured ones, each on ``samples`` points.

    k = 1 is excluded: there ``gamma = 1 / (2 max a_i)`` can drop to 1 or
    below and the far-field constant ``mu`` no longer exists.
    """
    members = []
    for _ in range(trials):
        n = int(rng.integers(3, 6))
        k = int(rng.integers(2, n + 1))
        members.append(random_instance(rng, n, k))
    members.extend(extra or [])
    rows = []
    violations = 0
    for i, w in enumerate(members):
        pts = sample_points(rng, w.params.n, samples)
        rep = verify_subsolution(w, pts)
        s = np.exp(rng.uniform(np.log(1e-2), np.log(1e4), size=64))
        ode = float(np.max(np.abs(ode_residual(w, s)) / (1.0 + w.alpha * s ** (-w.gamma))))
        c = w.mu + float(rng.uniform(0.1, 10.0))
        back = alpha_of_c(w.params, c, w.beta, w.sbar)
        trip = abs(mu_of_alpha(w.params, back, w.beta, w.sbar) - c)
        ok = rep.passed and ode <= 1e-11 and trip <= 1e-8
        violations += int(not ok)
        rows.append([i, w.params.n, w.params.k, w.alpha, w.beta, w.sbar, w.params.hk, rep.min_sigma_k,
                     float(np.min(rep.min_lower_sigmas)) if rep.min_lower_sigmas.size else float("nan"),
                     ode, trip, ok])
    # the radial fixtures of the symmetric case
    radial = []
    s = np.geomspace(1e-2, 1e4, 200)
    for n in range(3, 7):
        for k in range(2, n + 1):
            res = float(np.max(np.abs(RadialSolution(n, k, 1.0).ode_residual(s))))
            radial.append([n, k, res])
            violations += int(res > 1e-9)
    summary = {
        "members": len(members),
        "samples_per_member": samples,
        "min_sigma_k": float(min(r[7] for r in rows)),
        "max_ode_residual": float(max(r[9] for r in rows)),
        "max_round_trip": float(max(r[10] for r in rows)),
        "max_radial_residual": float(max(r[2] for r in radial)),
    }
    return SuiteResult("subsolution-verify", violations, summary, {
        "subsolution": (["member", "n", "k", "alpha", "beta", "sbar", "hk", "min_sigma_k",
                         "min_lower_sigma", "ode_residual", "round_trip", "passed"], rows),
        "radial": (["n", "k", "residual"], radial),
    })


def rigidity(rng, trials):
    """Asymmetric ``a`` must give a positive A_k^i spread and a witness; symmetric or k=n give none."""
    rows = []
    violations = 0
    for t in range(trials):
        n = int(rng.integers(3, 7))
        k = int(rng.integers(2, n))
        a = random_admissible(rng, n, k)
        rep = rigidity_falsifier(a, k)
        ok = rep.spread > 1e-8 and rep.witness is not None
        d = rep.witness["omega2_demanded"] if rep.witness else [float("nan")] * 2
        violations += int(not ok)
        rows.append(["asymmetric", n, k, rep.spread, rep.identity_residual, d[0], d[1], ok])
    for n in range(3, 7):
        for k in range(2, n + 1):
            a = np.full(n, cstar(n, k))
            rep = rigidity_falsifier(a, k)
            ok = rep.spread <= 1e-12 and rep.witness is None
            violations += int(not ok)
            rows.append(["symmetric", n, k, rep.spread, rep.identity_residual, float("nan"), float("nan"), ok])
        rep = rigidity_falsifier(random_admissible(rng, n, n), n)
        ok = rep.spread <= 1e-12
        violations += int(not ok)
        rows.append(["k=n", n, n, rep.spread, rep.identity_residual, float("nan"), float("nan"), ok])
    summary = {"trials": trials,
               "min_asymmetric_spread": float(min(r[3] for r in rows if r[0] == "asymmetric")),
               "max_control_spread": float(max(r[3] for r in rows if r[0] != "asymmetric"))}
    header = ["case", "n", "k", "spread", "identity_residual", "omega2_at_max", "omega2_at_min", "passed"]
    return SuiteResult("rigidity", violations, summary, {"rigidity": (header, rows)})


def decay_table(rng, trials, extra=None):
    """Log-log slope of ``omega - s - mu`` against the predicted ``(2 - n) theta / 2``."""
    members = []
    for n in range(3, 7):
        for k in range(2, n + 1):
            p = HessianParams.from_vector(np.full(n, cstar(n, k)), k)
            members.append(("symmetric", GeneralizedSubsolution(p, 1.0)))
    for _ in range(trials):
        n = int(rng.integers(3, 6))
        k = int(rng.integers(2, n + 1))
        members.append(("random", random_instance(rng, n, k, alpha_range=(1e-1, 1e1))))
    members.extend(("config", w) for w in (extra or []))
    rows = []
    violations = 0
    for case, w in members:
        fit = asymptotic_fit(w)
        ok = (not fit.indeterminate) and fit.rel_error <= 0.05
        violations += int(not ok)
        rows.append([case, w.params.n, w.params.k, w.params.theta, fit.expected, fit.slope, fit.rel_error, ok])
    summary = {"fits": len(rows), "max_rel_error": float(max(r[6] for r in rows))}
    header = ["case", "n", "k", "theta", "expected_slope", "slope", "rel_error", "passed"]
    return SuiteResult("decay", violations, summary, {"decay": (header, rows)})


# -- barriers and constants -----------------------------------------------------------


def barrier_suite(D: EllipsoidDomain, phi, A: AdmissibleMatrix, rng, boundary_samples=10_000, xi_mesh=None):
    """Build every mesh barrier and check separation on an independent boundary sample."""
    xi_mesh = default_xi_mesh(D) if xi_mesh is None else xi_mesh
    check = D.random_boundary(rng, boundary_samples)
    pv = phi.value(check)
    rows = []
    violations = 0
    for i, xi in enumerate(xi_mesh):
        try:
            b = build_barrier(D, phi, A, xi)
        except ConvexityError as exc:
            violations += 1
            rows.append([i, *xi, float("nan"), -1, float("nan"), float("nan"), float("nan"), False])
            continue
        gap = b(check) - pv
        away = np.linalg.norm(check - xi, axis=1) > 1e-6
        worst = float(np.max(gap[away], initial=-np.inf))
        ok = worst < 0 and b.doublings <= 40 and abs(float(b(xi)) - float(phi.value(xi))) <= 1e-12 * (1 + abs(b.phi_xi))
        violations += int(not ok)
        rows.append([i, *xi, b.t, b.doublings, float(np.linalg.norm(b.xbar)), b.cap_margin, worst, ok])
    summary = {
        "barriers": len(rows),
        "boundary_samples": boundary_samples,
        "max_t": float(np.nanmax([r[D.n + 1] for r in rows])),
        "max_doublings": int(max(r[D.n + 2] for r in rows)),
        "max_xbar_norm": float(np.nanmax([r[D.n + 3] for r in rows])),
        "worst_gap": float(np.nanmax([r[-2] for r in rows])),
    }
    axes = [f"xi_{j}" for j in range(D.n)]
    header = ["index", *axes, "t", "doublings", "xbar_norm", "cap_margin", "max_gap_off_xi", "passed"]
    return SuiteResult("barrier-build", violations, summary, {"barriers": (header, rows)})


def constants_suite(D, phi, A, sbar, c=None, c_margin=0.5, rng=None, samples=100_000):
    """Proof constants, the sandwich checks and a table of mu(alpha)."""
    pc = proof_constants(D, phi, A, sbar)
    c = pc.cstar_threshold + c_margin if c is None else c
    summary = {"constants": pc.to_record(), "c": c}
    violations = 0
    try:
        sw = sandwich(D, phi, A, c, pc, rng=rng, samples=samples)
        summary["sandwich"] = sw.checks
        summary["alpha_c"] = sw.omega.alpha
        summary["mu_alpha_c"] = sw.omega.mu
    except (ContractViolation, DomainError) as exc:
        violations += 1
        summary["sandwich_error"] = str(exc)
        sw = None
    mu0 = pc.beta - pc.sbar
    if not mu0 < pc.cstar_threshold:
        violations += 1
    alphas = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 25), [pc.alphahat]])
    rows = [[al, mu_of_alpha(pc.params, al, pc.beta, pc.sbar)] for al in alphas]
    mus = [r[1] for r in rows[:-1]]
    violations += int(np.any(np.diff(mus) <= 0))
    return SuiteResult("constants", violations, summary, {"mu_table": (["alpha", "mu"], rows)}), pc, sw
