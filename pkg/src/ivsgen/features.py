"""Shape-feature extraction at the short-maturity ATM anchor point.

A surface is locally approximated by a bivariate polynomial in
(tau, m); ordinary least squares recovers the expansion coefficients and
factorial rescaling turns them into the partial derivatives at
(tau -> 0+, m = 0): level, slope, curvature and term slope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from ivsgen.surfaces import GridSpec, IVSurface

FEATURE_NAMES = ("level", "slope", "curvature", "term_slope")

# (tau-exponent, m-exponent) per feature
_FEATURE_EXPONENTS = {
    "level": (0, 0),
    "slope": (0, 1),
    "curvature": (0, 2),
    "term_slope": (1, 0),
}

# Default monomial set: the four target derivatives plus one higher order
# per axis and the cross term, to absorb curvature-of-fit bias while
# staying well conditioned on a 28x28 grid.
DEFAULT_EXPONENTS = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (2, 0))


@dataclass(frozen=True)
class FeatureVector:
    """Named shape-feature values; the active subset is configurable."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))
        if v.shape != (len(self.names),):
            raise ValueError("values must align with names")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        for name in self.names:
            if name not in FEATURE_NAMES:
                raise ValueError(f"unknown feature {name!r}")
        if "level" in self.names and v[self.names.index("level")] <= 0:
            raise ValueError("level must be positive")

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def __getitem__(self, name: str) -> float:
        if name not in self.names:
            raise KeyError(name)
        return float(self.values[self.names.index(name)])


@dataclass
class RegressionBasis:
    """Monomial exponents (i, j) for tau^i m^j, plus fitted coefficients."""

    exponents: tuple[tuple[int, int], ...] = DEFAULT_EXPONENTS
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        self.exponents = tuple((int(i), int(j)) for i, j in self.exponents)
        required = {(0, 0), (0, 1), (0, 2), (1, 0)}
        if not required <= set(self.exponents):
            raise ValueError("basis must include (0,0), (0,1), (0,2), (1,0)")

    def design_matrix(self, grid: GridSpec) -> np.ndarray:
        tau = np.repeat(grid.tau_values, grid.n_m)
        m = np.tile(grid.m_values, grid.n_tau)
        return np.column_stack([tau**i * m**j for i, j in self.exponents])


def fit_anchor_regression(s: IVSurface, basis: RegressionBasis | None = None) -> RegressionBasis:
    """OLS fit of the monomial basis to the surface values.

    Solved by QR factorization (not normal equations) for conditioning.
    """
    basis = RegressionBasis(basis.exponents) if basis is not None else RegressionBasis()
    a = basis.design_matrix(s.grid)
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    tol = max(a.shape) * np.finfo(float).eps * diag.max()
    if np.any(diag < tol):
        dependent = [basis.exponents[k] for k in np.where(diag < tol)[0]]
        raise ValueError(f"rank-deficient design matrix; dependent columns {dependent}")
    beta = solve_triangular(r, q.T @ s.flatten())
    basis.coefficients = beta
    return basis


def extract_features(s: IVSurface, which=FEATURE_NAMES, basis: RegressionBasis | None = None) -> FeatureVector:
    """Features Sigma_ij = i! j! * beta_ij for the requested names."""
    fitted = fit_anchor_regression(s, basis)
    values = []
    for name in which:
        i, j = _FEATURE_EXPONENTS[name]
        k = fitted.exponents.index((i, j))
        values.append(math.factorial(i) * math.factorial(j) * fitted.coefficients[k])
    return FeatureVector(names=tuple(which), values=np.array(values))


def extract_features_matrix(flat_surfaces: np.ndarray, grid: GridSpec, which=FEATURE_NAMES) -> np.ndarray:
    """Vectorized extraction over rows of flattened surfaces.

    Returns an (n_surfaces, n_features) array; used by dataset building
    and evaluation where thousands of extractions are needed.
    """
    basis = RegressionBasis()
    a = basis.design_matrix(grid)
    q, r = np.linalg.qr(a)
    betas = solve_triangular(r, q.T @ flat_surfaces.T).T  # (n, n_basis)
    cols = []
    for name in which:
        i, j = _FEATURE_EXPONENTS[name]
        k = basis.exponents.index((i, j))
        cols.append(math.factorial(i) * math.factorial(j) * betas[:, k])
    return np.column_stack(cols)


def feature_error(given: FeatureVector, generated_surface: IVSurface) -> dict[str, float]:
    """Per-feature extract_features(generated) - given, as a name -> error map."""
    extracted = extract_features(generated_surface, which=given.names)
    if extracted.names != given.names:
        raise ValueError("feature-set mismatch")
    diff = extracted.values - given.values
    return {n: float(d) for n, d in zip(given.names, diff)}
