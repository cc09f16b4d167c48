"""Private linear regression: ridge closed form, output perturbation, noisy
gradient descent moments, and the adversarial seed constructions.

Normalisation used throughout::

    F(w) = (1/m) sum_i ||w x_i - y_i||^2 + lam ||w||^2,   w in R^{n x d}

so that one noisy gradient step reads ``W <- W M + B + sqrt(2 eta) sigma N`` with
``Sigma = X^T X / m + lam I``, ``M = I - 2 eta Sigma`` and ``B = (2 eta / m) Y^T X``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .numerics import (
    DomainError,
    RngStream,
    matrix_sqrt_psd,
    rng_gaussian_matrix,
    top_singular_triplet,
)
from .tradeoff import GaussianCurve, gaussian_tradeoff

__all__ = [
    "RidgeProblem",
    "NgdConfig",
    "GaussianRowModel",
    "WorstSeed",
    "NgdOperators",
    "DatasetParseError",
    "DataDependentBoundsWarning",
    "ridge_fit",
    "ridge_gradient",
    "ridge_sensitivity",
    "output_perturb",
    "output_perturbation_model",
    "ngd_operators",
    "ngd_moments",
    "stationary_diagnostics",
    "model_tradeoff",
    "query_tradeoff",
    "model_parameter",
    "query_parameter",
    "worst_seed",
    "pathological_pair",
    "read_dataset_csv",
    "problem_from_data",
]


class DatasetParseError(DomainError):
    """Malformed dataset CSV; carries 1-based ``line`` and ``column``."""

    def __init__(self, message: str, line: int, column: int | None = None):
        where = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


class DataDependentBoundsWarning(UserWarning):
    """Norm bounds were computed from the data and therefore are not private."""


@dataclass(frozen=True)
class RidgeProblem:
    X: np.ndarray
    Y: np.ndarray
    lam: float
    bounds: tuple[float, float, float]  # (M_x, M_y, M_theta)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
            raise DomainError(f"X and Y need the same positive number of rows, got {X.shape} and {Y.shape}")
        if not self.lam > 0:
            raise DomainError("regularisation lam must be positive")
        mx, my, mt = self.bounds
        if min(mx, my, mt) < 0:
            raise DomainError("norm bounds must be nonnegative")
        tol = 1e-12 * max(1.0, mx, my)
        if np.linalg.norm(X, axis=1).max() > mx + tol:
            raise DomainError("a row of X exceeds the bound M_x")
        if np.linalg.norm(Y, axis=1).max() > my + tol:
            raise DomainError("a row of Y exceeds the bound M_y")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class NgdConfig:
    eta: float
    sigma: float
    steps: Union[int, str] = "stationary"

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("step size eta must be positive")
        if self.sigma < 0:
            raise DomainError("noise scale sigma must be nonnegative")
        if self.steps != "stationary" and (int(self.steps) != self.steps or self.steps < 0):
            raise DomainError("steps must be a nonnegative integer or 'stationary'")


@dataclass(frozen=True)
class GaussianRowModel:
    """Independent Gaussian rows ``N(means[i], row_cov)``."""

    means: np.ndarray
    row_cov: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.atleast_2d(np.asarray(self.row_cov, dtype=float))
        if cov.shape != (means.shape[1], means.shape[1]):
            raise DomainError(f"row_cov shape {cov.shape} does not match {means.shape[1]} columns")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "row_cov", cov)


@dataclass(frozen=True)
class WorstSeed:
    z: np.ndarray
    achieved_mu: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.z, self.achieved_mu))


@dataclass(frozen=True)
class NgdOperators:
    sigma_mat: np.ndarray   # X^T X / m + lam I
    M: np.ndarray
    B: np.ndarray
    eigvals: np.ndarray     # of sigma_mat, ascending
    eigvecs: np.ndarray


# ---------------------------------------------------------------------------
# ridge regression and output perturbation
# ---------------------------------------------------------------------------


def ridge_fit(problem: RidgeProblem) -> np.ndarray:
    """Minimiser ``Y^T X (X^T X + m lam I)^{-1}`` of the ridge objective, shape (n, d)."""
    X, Y = problem.X, problem.Y
    gram = X.T @ X + problem.m * problem.lam * np.eye(problem.d)
    # Solve gram w^T = X^T Y; gram is symmetric positive definite.
    return np.linalg.solve(gram, X.T @ Y).T


def ridge_gradient(problem: RidgeProblem, w: np.ndarray) -> np.ndarray:
    X, Y = problem.X, problem.Y
    resid = X @ w.T - Y
    return (2.0 / problem.m) * resid.T @ X + 2.0 * problem.lam * w


def ridge_sensitivity(bounds, lam: float, m: int) -> float:
    """Delta = 2 L / (m lam) with L = M_x^2 M_theta + M_x M_y + lam M_theta."""
    mx, my, mt = bounds
    if min(mx, my, mt) < 0 or not lam > 0 or m < 1:
        raise DomainError("need nonnegative bounds, lam > 0 and m >= 1")
    lip = mx * mx * mt + mx * my + lam * mt
    return 2.0 * lip / (m * lam)


def output_perturb(weights: np.ndarray, sigma_theta: float, stream: RngStream, index: int = 0) -> np.ndarray:
    if sigma_theta < 0:
        raise DomainError("sigma_theta must be nonnegative")
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    return w + rng_gaussian_matrix(stream, w.shape[0], w.shape[1], sigma_theta, index=index)


def output_perturbation_model(weights: np.ndarray, sigma_theta: float) -> GaussianRowModel:
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    return GaussianRowModel(w, sigma_theta**2 * np.eye(w.shape[1]))


# ---------------------------------------------------------------------------
# noisy gradient descent
# ---------------------------------------------------------------------------


def ngd_operators(problem: RidgeProblem, eta: float) -> NgdOperators:
    X, Y, m = problem.X, problem.Y, problem.m
    sig = X.T @ X / m + problem.lam * np.eye(problem.d)
    sig = 0.5 * (sig + sig.T)
    vals, vecs = np.linalg.eigh(sig)
    M = np.eye(problem.d) - 2.0 * eta * sig
    B = (2.0 * eta / m) * Y.T @ X
    return NgdOperators(sig, M, B, vals, vecs)


def _contracts(ops: NgdOperators, eta: float) -> bool:
    # Spectrum of M is 1 - 2 eta s with s > 0, so |M| < 1 iff eta * s_max < 1.
    return eta * ops.eigvals[-1] < 1.0


def ngd_moments(problem: RidgeProblem, config: NgdConfig) -> GaussianRowModel:
    """Row law of the NGD iterate after ``config.steps`` steps from N(0, I) rows.

    Geometric sums are evaluated per eigenvalue of Sigma, which keeps large
    step counts and nearly-unit eigenvalues of M well conditioned.
    """
    eta, sigma = config.eta, config.sigma
    ops = ngd_operators(problem, eta)
    s, U = ops.eigvals, ops.eigvecs
    mvals = 1.0 - 2.0 * eta * s
    one_minus_m = 2.0 * eta * s
    one_minus_m2 = 4.0 * eta * s * (1.0 - eta * s)

    if config.steps == "stationary":
        if not _contracts(ops, eta):
            raise DomainError(
                f"stationary law requested but eta * lambda_max(Sigma) = {eta * s[-1]:.6g} >= 1"
            )
        mean_fac = 1.0 / one_minus_m
        cov_diag = 2.0 * eta * sigma**2 / one_minus_m2
    else:
        t = int(config.steps)
        mt = np.power(mvals, t)
        m2t = mt * mt
        mean_fac = (1.0 - mt) / one_minus_m
        with np.errstate(divide="ignore", invalid="ignore"):
            geo2 = np.where(np.abs(one_minus_m2) > 1e-300, (1.0 - m2t) / one_minus_m2, float(t))
        cov_diag = m2t + 2.0 * eta * sigma**2 * geo2

    means = ops.B @ (U * mean_fac) @ U.T
    cov = (U * cov_diag) @ U.T
    return GaussianRowModel(means, 0.5 * (cov + cov.T))


def stationary_diagnostics(problem: RidgeProblem, config: NgdConfig) -> dict:
    """Both stationary covariance expressions and the contraction checks.

    ``cov_recursion`` is the geometric-sum limit 2 eta sigma^2 (I - M^2)^{-1};
    ``cov_compact`` is the shorter expression sigma^2 M^{-1} Sigma^{-1}, which
    does not agree with the recursion and is reported for comparison only.
    """
    eta, sigma = config.eta, config.sigma
    ops = ngd_operators(problem, eta)
    d = problem.d
    eye = np.eye(d)
    contracts = _contracts(ops, eta)
    rec = 2 * eta * sigma**2 * np.linalg.inv(eye - ops.M @ ops.M) if contracts else None
    try:
        compact = sigma**2 * np.linalg.inv(ops.M) @ np.linalg.inv(ops.sigma_mat)
    except np.linalg.LinAlgError:
        compact = None
    mx = problem.bounds[0]
    diff = None
    if rec is not None and compact is not None:
        diff = float(np.linalg.norm(rec - compact))
    return {
        "eta_lambda_max": float(eta * ops.eigvals[-1]),
        "contracts": bool(contracts),
        "bound_condition": float(eta * (problem.lam + mx * mx)),
        "cov_recursion": rec,
        "cov_compact": compact,
        "frobenius_gap": diff,
    }


# ---------------------------------------------------------------------------
# trade-offs of Gaussian row models and adversarial seeds
# ---------------------------------------------------------------------------


def _shared_cov(a: GaussianRowModel, b: GaussianRowModel) -> np.ndarray:
    if a.means.shape != b.means.shape:
        raise DomainError("models have different shapes")
    scale = max(1.0, float(np.abs(a.row_cov).max()))
    if not np.allclose(a.row_cov, b.row_cov, rtol=0, atol=1e-12 * scale):
        raise DomainError("models must share the same row covariance")
    return a.row_cov


def model_parameter(a: GaussianRowModel, b: GaussianRowModel) -> float:
    """Mahalanobis distance sqrt(sum_i delta_i^T C^{-1} delta_i) between the models."""
    cov = _shared_cov(a, b)
    delta = a.means - b.means
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, delta.T)  # columns are L^{-1} delta_i
    return float(np.linalg.norm(white))


def model_tradeoff(a: GaussianRowModel, b: GaussianRowModel) -> GaussianCurve:
    return gaussian_tradeoff(model_parameter(a, b))


def query_parameter(a: GaussianRowModel, b: GaussianRowModel, z) -> float:
    cov = _shared_cov(a, b)
    z = np.asarray(z, dtype=float).ravel()
    if not np.any(z):
        raise DomainError("seed z must be nonzero")
    delta = a.means - b.means
    scale = math.sqrt(float(z @ cov @ z))
    return float(np.linalg.norm(delta @ z) / scale)


def query_tradeoff(a: GaussianRowModel, b: GaussianRowModel, z) -> GaussianCurve:
    """Trade-off between the releases ``V z`` and ``W z`` for a fixed seed ``z``."""
    return gaussian_tradeoff(query_parameter(a, b, z))


def worst_seed(a: GaussianRowModel, b: GaussianRowModel) -> WorstSeed:
    """Seed maximising the single-query Gaussian parameter.

    With ``u = C^{1/2} z`` the parameter is ``||delta C^{-1/2} u|| / ||u||``,
    maximised by the top right singular vector of ``delta C^{-1/2}``.
    """
    cov = _shared_cov(a, b)
    inv_half = matrix_sqrt_psd(cov, inverse=True)
    trip = top_singular_triplet((a.means - b.means) @ inv_half)
    if trip.degenerate:
        z = np.zeros(cov.shape[0])
        z[0] = 1.0
        return WorstSeed(z, 0.0, True)
    return WorstSeed(inv_half @ trip.right, float(trip.sigma_max), False)


def pathological_pair(a, u, v, scale: float, lam: float = 1.0) -> tuple[RidgeProblem, RidgeProblem]:
    """Adjacent-style datasets ``(a u^T, a v^T)`` and ``(a u^T, scale * a v^T)``.

    Both ridge solutions are multiples of ``v u^T``, so their difference has
    rank one and its spectral and Frobenius norms coincide:
    ``||mu|| = |scale - 1| ||a||^2 ||v|| / (m lam + ||a||^2)`` for unit ``u``.
    """
    a = np.asarray(a, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if not np.any(a):
        raise DomainError("a must be nonzero")
    if not math.isclose(float(np.linalg.norm(u)), 1.0, rel_tol=1e-9):
        raise DomainError("u must be a unit vector")
    X = np.outer(a, u)
    Y = np.outer(a, v)
    Y2 = scale * Y
    mx = float(np.abs(a).max())
    my = float(np.abs(a).max() * max(1.0, abs(scale)) * np.linalg.norm(v))
    p1 = RidgeProblem(X, Y, lam, (mx, my, 0.0))
    p2 = RidgeProblem(X, Y2, lam, (mx, my, 0.0))
    mt = max(float(np.linalg.norm(ridge_fit(p1))), float(np.linalg.norm(ridge_fit(p2))))
    return (RidgeProblem(X, Y, lam, (mx, my, mt)), RidgeProblem(X, Y2, lam, (mx, my, mt)))


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x_1..x_d,y_1..y_n`` columns (header required) into ``(X, Y)``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("empty file, header required", 1) from None
        header = [h.strip() for h in header]
        xcols, ycols = [], []
        for j, name in enumerate(header, start=1):
            if name.startswith("x_") and name[2:].isdigit():
                xcols.append(j - 1)
            elif name.startswith("y_") and name[2:].isdigit():
                ycols.append(j - 1)
            else:
                raise DatasetParseError(f"unexpected header field {name!r}", 1, j)
        if not xcols or not ycols:
            raise DatasetParseError("header needs at least one x_ and one y_ column", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    x = float(cell)
                except ValueError:
                    raise DatasetParseError(f"not a number: {cell!r}", lineno, j) from None
                if not math.isfinite(x):
                    raise DatasetParseError(f"non-finite value {cell!r}", lineno, j)
                vals.append(x)
            rows.append(vals)
    if not rows:
        raise DatasetParseError("no data rows", 2)
    data = np.array(rows)
    return data[:, xcols], data[:, ycols]


def problem_from_data(X, Y, lam: float, bounds=None) -> RidgeProblem:
    """Build a RidgeProblem; missing bounds are filled with empirical maxima (with a warning)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if bounds is None:
        warnings.warn(
            "norm bounds computed from the data are data-dependent; the resulting "
            "sensitivity is not a differential privacy guarantee",
            DataDependentBoundsWarning,
            stacklevel=2,
        )
        mx = float(np.linalg.norm(X, axis=1).max())
        my = float(np.linalg.norm(Y, axis=1).max())
        tmp = RidgeProblem(X, Y, lam, (mx, my, 0.0))
        bounds = (mx, my, float(np.linalg.norm(ridge_fit(tmp), 2)))
    return RidgeProblem(X, Y, lam, tuple(float(b) for b in bounds))
