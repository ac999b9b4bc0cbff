"""Experiment configuration files and the affine reduction to diagonal ``A``, ``b = 0``.

A configuration is a flat TOML file of scalars and arrays::

    n = 3
    k = 2
    A = [0.4, 0.6, 1.0]          # diagonal entries, or a full symmetric matrix
    normalize = true             # rescale A onto sigma_k(lambda(A)) = 1
    b = [0.0, 0.0, 0.0]
    c_margin = 0.5               # c = threshold + c_margin unless c is given
    semi_axes = [1.0, 0.8, 0.6]
    center = [0.0, 0.0, 0.0]
    rotation = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    phi = [[1.0, [0, 0, 0]], [0.5, [2, 0, 0]]]   # (coefficient, exponents) terms
    h = 0.2
    seed = 7

Every key except ``n`` and ``k`` has a default.  ``validate`` collects every
problem at once, as a list of ``{"field", "error"}`` records, so the CLI can
report them in machine-readable form.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import DomainError
from .geometry import BoundaryData, EllipsoidDomain, Polynomial, TransformedData
from .spectral import eigen_oracle
from .symfun import AdmissibleMatrix, sigma

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

NORMALIZATION_TOL = 1e-12

KNOWN_KEYS = {
    "n", "k", "A", "normalize", "b", "c", "c_margin", "semi_axes", "center", "rotation",
    "phi", "h", "S_out", "sbar", "seed", "trials", "samples", "out",
}


class ConfigError(DomainError):
    """Schema violations; ``problems`` holds one record per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p['field']}: {p['error']}" for p in self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    k: int
    A: np.ndarray  # full symmetric matrix
    b: np.ndarray
    semi_axes: np.ndarray
    center: np.ndarray
    rotation: np.ndarray
    phi_terms: tuple
    c: Optional[float] = None
    c_margin: float = 0.5
    h: float = 0.2
    S_out: Optional[float] = None
    sbar: Optional[float] = None
    seed: int = 0
    trials: int = 1000
    samples: int = 1000
    out: str = "out"
    diagonal_input: bool = True

    @property
    def is_reduced(self):
        """Diagonal A and b = 0, the form every numerical module expects."""
        off = self.A - np.diag(np.diag(self.A))
        return bool(np.all(off == 0) and np.all(self.b == 0))

    def admissible_matrix(self):
        if not self.is_reduced:
            raise DomainError("run affine_reduce first: A must be diagonal and b = 0")
        return AdmissibleMatrix(np.diag(self.A).copy(), self.k)

    def domain(self):
        return EllipsoidDomain(self.semi_axes, self.center, self.rotation)

    def polynomial(self):
        return Polynomial(self.n, self.phi_terms)

    def boundary_data(self, phi=None):
        return BoundaryData(self.domain(), self.polynomial() if phi is None else phi)

    def to_record(self):
        return {
            "n": self.n, "k": self.k, "A": self.A.tolist(), "b": self.b.tolist(),
            "semi_axes": self.semi_axes.tolist(), "center": self.center.tolist(),
            "rotation": self.rotation.tolist(),
            "phi": [[c, list(p)] for c, p in self.phi_terms],
            "c": self.c, "c_margin": self.c_margin, "h": self.h, "S_out": self.S_out,
            "sbar": self.sbar, "seed": self.seed, "trials": self.trials,
            "samples": self.samples, "out": self.out,
        }


def _vector(raw, name, n, problems, positive=False):
    try:
        v = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        problems.append({"field": name, "error": "not a numeric array"})
        return None
    if v.shape != (n,):
        problems.append({"field": name, "error": f"expected {n} entries, got shape {list(v.shape)}"})
        return None
    if not np.all(np.isfinite(v)):
        problems.append({"field": name, "error": "non-finite entries"})
        return None
    if positive and np.any(v <= 0):
        problems.append({"field": name, "error": "entries must be positive"})
        return None
    return v


def validate(raw: dict) -> ExperimentConfig:
    """Check a parsed mapping against the schema and build the config."""
    if not raw:
        raise ConfigError([{"field": "<root>", "error": "empty configuration"}])
    problems = []
    for key in sorted(set(raw) - KNOWN_KEYS):
        problems.append({"field": key, "error": "unknown key"})
    n, k = raw.get("n"), raw.get("k")
    if not isinstance(n, int) or isinstance(n, bool) or n < 2:
        problems.append({"field": "n", "error": "required integer >= 2"})
        raise ConfigError(problems)
    if not isinstance(k, int) or isinstance(k, bool) or not 1 <= k <= n:
        problems.append({"field": "k", "error": f"required integer in [1, {n}]"})
        raise ConfigError(problems)

    A = None
    A_raw = raw.get("A", [1.0] * n)
    try:
        A_arr = np.array(A_raw, dtype=float)
    except (TypeError, ValueError):
        A_arr = None
    diagonal_input = A_arr is not None and A_arr.ndim == 1
    if A_arr is None or A_arr.shape not in ((n,), (n, n)) or not np.all(np.isfinite(A_arr)):
        problems.append({"field": "A", "error": f"expected {n} diagonal entries or an {n}x{n} matrix"})
    else:
        A = np.diag(A_arr) if diagonal_input else A_arr
        if np.max(np.abs(A - A.T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
            problems.append({"field": "A", "error": "matrix is not symmetric"})
            A = None
    if A is not None:
        A = 0.5 * (A + A.T)
        lam = eigen_oracle(A)
        if lam[0] <= 0:
            problems.append({"field": "A", "error": f"not positive definite: eigenvalue {lam[0]!r}"})
            A = None
        else:
            sk = float(sigma(lam, k))
            if raw.get("normalize", True):
                A = A / sk ** (1.0 / k)
            elif abs(sk - 1.0) > NORMALIZATION_TOL:
                problems.append({"field": "A", "error": f"sigma_k(lambda(A)) = {sk!r}, expected 1"})
                A = None

    b = _vector(raw.get("b", [0.0] * n), "b", n, problems)
    axes = _vector(raw.get("semi_axes", [1.0] * n), "semi_axes", n, problems, positive=True)
    center = _vector(raw.get("center", [0.0] * n), "center", n, problems)
    rotation = np.eye(n)
    if "rotation" in raw:
        try:
            rotation = np.array(raw["rotation"], dtype=float)
        except (TypeError, ValueError):
            rotation = None
        if rotation is None or rotation.shape != (n, n) or \
                np.max(np.abs(rotation.T @ rotation - np.eye(n))) > 1e-10:
            problems.append({"field": "rotation", "error": f"expected an orthogonal {n}x{n} matrix"})
            rotation = None

    terms = []
    phi_raw = raw.get("phi", [[0.0, [0] * n]])
    try:
        for coef, powers in phi_raw:
            if len(powers) != n or any(int(p) != p or p < 0 for p in powers):
                raise ValueError
            terms.append((float(coef), tuple(int(p) for p in powers)))
    except (TypeError, ValueError):
        problems.append({"field": "phi", "error": f"expected a list of [coefficient, [{n} exponents]]"})

    scalars = {}
    for key, kind, default, check, msg in (
        ("c", float, None, np.isfinite, "finite"),
        ("c_margin", float, 0.5, lambda v: v > 0, "positive"),
        ("h", float, 0.2, lambda v: v > 0, "positive"),
        ("S_out", float, None, lambda v: v > 0, "positive"),
        ("sbar", float, None, lambda v: v > 0, "positive"),
        ("seed", int, 0, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
        ("trials", int, 1000, lambda v: v > 0, "positive"),
        ("samples", int, 1000, lambda v: v > 0, "positive"),
    ):
        v = raw.get(key, default)
        if v is None:
            scalars[key] = None
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
            problems.append({"field": key, "error": f"expected {kind.__name__}"})
            continue
        if not check(v):
            problems.append({"field": key, "error": f"must be {msg}"})
            continue
        scalars[key] = kind(v)
    out = raw.get("out", "out")
    if not isinstance(out, str):
        problems.append({"field": "out", "error": "expected a path string"})
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        n=n, k=k, A=A, b=b, semi_axes=axes, center=center, rotation=rotation,
        phi_terms=tuple(terms), out=out, diagonal_input=diagonal_input, **scalars,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([{"field": "<file>", "error": f"TOML parse error: {exc}"}]) from exc
    return validate(raw)


@dataclass(frozen=True)
class AffineTransform:
    """``y = O x``; a reduced solution ``v(y)`` maps back to ``u(x) = v(O x) + b . x``."""

    O: np.ndarray
    b: np.ndarray

    def to_reduced(self, x):
        return np.asarray(x, dtype=float) @ self.O.T

    def from_reduced(self, y):
        return np.asarray(y, dtype=float) @ self.O

    def lift(self, v):
        """The original-coordinates function ``x -> v(O x) + b . x``."""
        return lambda x: v(self.to_reduced(x)) + np.asarray(x, dtype=float) @ self.b


@dataclass(frozen=True)
class ReducedProblem:
    config: ExperimentConfig
    phi: BoundaryData
    transform: AffineTransform = field(repr=False)


def affine_reduce(cfg: ExperimentConfig) -> ReducedProblem:
    """Rotate A to diagonal form and absorb ``b . x`` into the boundary data."""
    lam, V = eigen_oracle(cfg.A, return_vectors=True)
    if lam[0] <= 0:
        raise DomainError(f"A is not positive definite: eigenvalue {lam[0]!r}")
    off = cfg.A - np.diag(np.diag(cfg.A))
    if np.all(off == 0):
        # already diagonal: keep the coordinate order, identity transform
        O = np.eye(cfg.n)
        lam = np.diag(cfg.A).copy()
    else:
        O = V.T
    t = AffineTransform(O, cfg.b.copy())
    reduced = replace(
        cfg,
        A=np.diag(lam),
        b=np.zeros(cfg.n),
        center=O @ cfg.center,
        rotation=O @ cfg.rotation,
    )
    D = reduced.domain()
    poly = cfg.polynomial()
    data = poly if np.all(cfg.b == 0) and np.all(O == np.eye(cfg.n)) else TransformedData(poly, O, cfg.b)
    return ReducedProblem(reduced, BoundaryData(D, data), t)
