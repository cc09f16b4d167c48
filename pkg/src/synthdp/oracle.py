"""Brute-force ground truth for the analytic modules.

Exact one-dimensional laws of ``VZ`` (characteristic-function inversion and
the Bessel closed form), Neyman-Pearson trade-offs of tabulated or finite
distributions, samplers of the actual mechanisms, and empirical ROC curves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from .amplification import MechanismSpec, single_point_bound, worst_case_placement
from .mechanisms import GaussianRowModel, NgdConfig, RidgeProblem, ngd_operators
from .numerics import (
    DensityGrid,
    DomainError,
    Grid1D,
    RngStream,
    bessel_k,
    invert_characteristic_function_1d,
)
from .tradeoff import TabulatedCurve, gaussian_tradeoff

__all__ = [
    "CoverageError",
    "OracleInconsistency",
    "EmpiricalRoc",
    "VerificationReport",
    "sample_product",
    "cf_vz",
    "bessel_density",
    "mixture_density",
    "tail_mass_vz",
    "default_grid",
    "density_vz_1d",
    "tradeoff_from_masses",
    "tradeoff_by_enumeration",
    "exact_tradeoff_1d",
    "verify_single_point_bound",
    "empirical_power",
    "query_attack_roc",
    "simulate_ngd",
    "ngd_moments_by_recursion",
]


class CoverageError(DomainError):
    """The grid misses more than the allowed probability mass."""


class OracleInconsistency(RuntimeError):
    """Two independent oracle computations disagree beyond tolerance."""


# ---------------------------------------------------------------------------
# the product mechanism
# ---------------------------------------------------------------------------


def sample_product(v, spec: MechanismSpec, count: int, stream: RngStream,
                   chunk: int = 4096) -> np.ndarray:
    """``count`` draws of ``(sigma_theta N + v) Z`` with shape ``(count, n, l)``.

    Draws are produced in fixed-size chunks, chunk ``k`` from ``stream.generator(k)``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n, d, l = spec.n, spec.d, spec.l
    if v.shape != (n, d):
        raise DomainError(f"v must have shape ({n}, {d}), got {v.shape}")
    if count < 1:
        raise DomainError("count must be positive")
    out = np.empty((count, n, l))
    for k, start in enumerate(range(0, count, chunk)):
        size = min(chunk, count - start)
        gen = stream.generator(k)
        N = gen.standard_normal((size, n, d))
        Z = spec.sigma_z * gen.standard_normal((size, d, l))
        out[start:start + size] = np.matmul(spec.sigma_theta * N + v, Z)
    return out


def cf_vz(t, v_norm: float, spec: MechanismSpec):
    """Characteristic function of ``VZ`` for n = l = 1 (real and even)."""
    t = np.asarray(t, dtype=float)
    a = 1.0 + (spec.sigma_z * spec.sigma_theta * t) ** 2
    return np.exp(-0.5 * (spec.sigma_z * t * v_norm) ** 2 / a - 0.5 * spec.d * np.log(a))


def bessel_density(s, d: int, sigma_theta: float = 1.0, sigma_z: float = 1.0):
    """Closed-form density of ``VZ`` at ``v = 0`` (generalised Laplace law)."""
    s = np.abs(np.asarray(s, dtype=float))
    sig = sigma_theta * sigma_z
    nu = 0.5 * (d - 1)
    log_norm = 0.5 * math.log(math.pi) + nu * math.log(2.0) + special.gammaln(0.5 * d) + (nu + 1) * math.log(sig)
    out = np.empty_like(s)
    pos = s > 0
    if np.any(pos):
        x = s[pos]
        out[pos] = np.exp(nu * np.log(x) + bessel_k(nu, x / sig, log=True) - log_norm)
    if np.any(~pos):
        if nu == 0:
            out[~pos] = np.inf
        else:
            # |s|^nu K_nu(|s|/sig) -> Gamma(nu) 2^(nu-1) sig^nu as s -> 0.
            out[~pos] = math.exp(special.gammaln(nu) + (nu - 1) * math.log(2.0) + nu * math.log(sig) - log_norm)
    return out


def _radius_law(v_norm: float, spec: MechanismSpec):
    # ||sigma_theta N + v||^2 / sigma_theta^2 is noncentral chi-squared with d dof.
    nc = (v_norm / spec.sigma_theta) ** 2
    return stats.chi2(spec.d) if nc == 0 else stats.ncx2(spec.d, nc)


def mixture_density(s, v_norm: float, spec: MechanismSpec):
    """Density of ``VZ`` by quadrature over the Gaussian scale mixture.

    Conditionally on ``N``, ``VZ ~ N(0, sigma_z^2 R^2)`` with ``R = ||sigma_theta N + v||``.
    Independent of the characteristic-function route; slow, meant for spot checks.
    """
    law = _radius_law(v_norm, spec)
    c = spec.sigma_z * spec.sigma_theta

    def one(x):
        f = lambda y: stats.norm.pdf(x, scale=c * math.sqrt(y)) * law.pdf(y)
        lo, hi = law.ppf(1e-14), law.isf(1e-14)
        return integrate.quad(f, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-10)[0]

    return np.array([one(float(x)) for x in np.atleast_1d(s)])


def tail_mass_vz(a: float, v_norm: float, spec: MechanismSpec) -> float:
    """``P(|VZ| > a)`` by quadrature over the scale mixture."""
    law = _radius_law(v_norm, spec)
    c = spec.sigma_z * spec.sigma_theta
    f = lambda y: 2.0 * special.ndtr(-a / (c * math.sqrt(y))) * law.pdf(y) if y > 0 else 0.0
    lo, hi = law.ppf(1e-16), law.isf(1e-16)
    return float(integrate.quad(f, lo, hi, limit=400, epsabs=1e-14)[0])


def default_grid(v_norm: float, spec: MechanismSpec, width: float = 12.0,
                 n_points: int = 2**15) -> Grid1D:
    sd = spec.sigma_z * math.sqrt(spec.sigma_theta**2 * spec.d + v_norm**2)
    return Grid1D.symmetric(width * sd, n_points)


def density_vz_1d(v, spec: MechanismSpec, grid: Grid1D | None = None,
                  bessel_tol: float = 1e-6, coverage_tol: float = 1e-4) -> DensityGrid:
    """Density of ``VZ`` (n = l = 1) on a grid; depends on ``v`` only through ``||v||``.

    For ``v = 0`` the Bessel closed form is evaluated too and its sup-distance
    is stored in ``extras["bessel_sup_error"]``; exceeding ``bessel_tol``
    raises OracleInconsistency.  A grid missing more than ``coverage_tol``
    probability mass raises CoverageError.
    """
    if spec.n != 1 or spec.l != 1:
        raise DomainError("density_vz_1d needs n = l = 1")
    v_norm = float(np.linalg.norm(np.asarray(v, dtype=float)))
    if grid is None:
        grid = default_grid(v_norm, spec)
    half = min(-grid.lo, grid.hi)
    tail = tail_mass_vz(half, v_norm, spec) if half > 0 else 1.0
    if tail > coverage_tol:
        raise CoverageError(f"grid [{grid.lo:.4g}, {grid.hi:.4g}] misses probability mass {tail:.3g}")
    dens = invert_characteristic_function_1d(lambda t: cf_vz(t, v_norm, spec), grid)
    extras = {"v_norm": v_norm, "tail_mass": tail}
    if v_norm == 0.0:
        pts = grid.points
        finite = pts != 0 if spec.d == 1 else np.ones(pts.shape, dtype=bool)
        ref = bessel_density(pts[finite], spec.d, spec.sigma_theta, spec.sigma_z)
        err = float(np.max(np.abs(dens.values[finite] - ref)))
        extras["bessel_sup_error"] = err
        if err > bessel_tol:
            raise OracleInconsistency(f"CF inversion and Bessel form differ by {err:.3g}")
    return DensityGrid(grid, dens.values, dens.mass, dens.truncation_bound, False, extras)


# ---------------------------------------------------------------------------
# exact trade-offs
# ---------------------------------------------------------------------------


def tradeoff_from_masses(p, q, error_bound: float = 0.0) -> TabulatedCurve:
    """Trade-off ``T(P, Q)`` of finite distributions via Neyman-Pearson.

    Outcomes are rejected in decreasing order of the likelihood ratio ``q/p``;
    randomising on the boundary outcome interpolates linearly between the
    resulting vertices, which is exactly the optimal randomised test.
    """
    p = np.clip(np.asarray(p, dtype=float), 0, None)
    q = np.clip(np.asarray(q, dtype=float), 0, None)
    keep = (p > 0) | (q > 0)
    p, q = p[keep] / p.sum(), q[keep] / q.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, q / p, np.inf)
    order = np.argsort(-ratio, kind="stable")
    alphas = np.concatenate([[0.0], np.cumsum(p[order])])
    power = np.concatenate([[0.0], np.cumsum(q[order])])
    alphas[-1] = power[-1] = 1.0
    # Equal-ratio cells are collinear; tied alphas (p = 0 cells) keep the largest power.
    uniq, idx = np.unique(alphas[::-1], return_index=True)
    power = power[::-1][idx]
    betas = np.clip(1.0 - power, 0.0, 1.0)
    return TabulatedCurve(uniq, betas, error_bound)


def tradeoff_by_enumeration(p, q) -> TabulatedCurve:
    """Trade-off of finite distributions by enumerating every deterministic test.

    The achievable (alpha, beta) region is the convex hull of the 2^k subset
    tests; the trade-off is its lower boundary.  Exponential in the support
    size, so restricted to k <= 16; independent of the likelihood-ratio route.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k = len(p)
    if k != len(q) or k > 16:
        raise DomainError("need equal supports of size at most 16")
    pts = set()
    for mask in product((0.0, 1.0), repeat=k):
        m = np.array(mask)
        pts.add((float(m @ p), float(1.0 - m @ q)))
    pts = sorted(pts)
    # Lower convex hull (monotone chain) of the test points.
    hull: list[tuple[float, float]] = []
    for pt in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (pt[1] - y1) - (y2 - y1) * (pt[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(pt)
    xs = np.array([h[0] for h in hull])
    ys = np.array([h[1] for h in hull])
    # Beyond the hull's minimum, beta stays at its minimum (tests can waste level).
    imin = int(np.argmin(ys))
    xs, ys = xs[: imin + 1], ys[: imin + 1]
    if xs[-1] < 1.0:
        xs, ys = np.append(xs, 1.0), np.append(ys, ys[-1])
    return TabulatedCurve(xs, ys)


def _discretisation_bound(dens: DensityGrid) -> float:
    # Trapezoid error (h^2/12) * int |p''|, with int |p''| from second differences.
    h = dens.grid.spacing
    second = np.abs(np.diff(dens.values, 2)).sum() / h
    return float(h * h / 12.0 * second)


def exact_tradeoff_1d(p: DensityGrid, q: DensityGrid, alphas: Sequence[float] | None = None):
    """Exact trade-off between two tabulated densities on a shared grid.

    Returns the tabulated curve, or its values at ``alphas`` when given.  The
    curve's ``error_bound`` combines trapezoid error and mass deficits.
    """
    if p.grid != q.grid:
        raise DomainError("densities must share a grid")
    bound = (_discretisation_bound(p) + _discretisation_bound(q)
             + abs(1.0 - p.mass) + abs(1.0 - q.mass) + p.truncation_bound + q.truncation_bound)
    curve = tradeoff_from_masses(p.cell_masses(), q.cell_masses(), bound)
    if alphas is None:
        return curve
    return np.asarray(curve.eval(np.asarray(alphas, dtype=float)))


@dataclass
class VerificationReport:
    passed: bool
    records: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "summary": self.summary, "records": self.records}


def verify_single_point_bound(spec: MechanismSpec, d_list: Sequence[int],
                              alphas: Sequence[float] | None = None, tol: float = 1e-3,
                              n_points: int = 2**15, width: float = 12.0) -> VerificationReport:
    """Check that the exact trade-off at the worst-case placement dominates
    ``h - tol`` and the post-processing floor ``- tol`` for every ``d``.

    ``spec.d`` is ignored; each entry of ``d_list`` replaces it.
    """
    if spec.n != 1 or spec.l != 1:
        raise DomainError("single-point verification needs n = l = 1")
    alphas = np.linspace(0.01, 0.99, 50) if alphas is None else np.asarray(alphas, dtype=float)
    report = VerificationReport(True)
    for d in d_list:
        sp = MechanismSpec(spec.sigma_theta, int(d), spec.Delta, spec.sigma_z, 1, 1, spec.C, spec.shift)
        s = sp.sigma_theta**2 * sp.d
        v, w, _ = worst_case_placement(s, sp.Delta)
        grid = default_grid(w, sp, width, n_points)
        pv = density_vz_1d([v], sp, grid)
        pw = density_vz_1d([w], sp, grid)
        exact = exact_tradeoff_1d(pv, pw)
        h = single_point_bound(sp)
        floor = gaussian_tradeoff(sp.Delta / sp.sigma_theta)
        ex = np.asarray(exact.eval(alphas))
        hb = np.asarray(h.eval(alphas))
        fl = np.asarray(floor.eval(alphas))
        ok_h = ex >= hb - tol
        ok_f = ex >= fl - tol
        for a, e, b, f_, p1, p2 in zip(alphas, ex, hb, fl, ok_h, ok_f):
            report.records.append({
                "d": int(d), "alpha": float(a), "exact_beta": float(e), "bound_beta": float(b),
                "margin": float(e - b), "floor_beta": float(f_), "floor_margin": float(e - f_),
                "pass": bool(p1 and p2),
            })
        passed = bool(ok_h.all() and ok_f.all())
        report.summary.append({
            "d": int(d), "Delta": sp.Delta, "min_margin": float((ex - hb).min()),
            "min_floor_margin": float((ex - fl).min()), "discretisation_bound": exact.error_bound,
            "pass": passed,
        })
        report.passed &= passed
    return report


# ---------------------------------------------------------------------------
# empirical tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalRoc:
    thresholds: np.ndarray
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    alpha_se: np.ndarray
    beta_se: np.ndarray


def empirical_power(samples0, samples1, statistic: Callable | None, thresholds) -> EmpiricalRoc:
    """ROC of the test rejecting the null (``samples0``) when ``statistic > threshold``."""
    s0 = np.asarray(samples0)
    s1 = np.asarray(samples1)
    if len(s0) < 1000 or len(s1) < 1000:
        raise DomainError("need at least 1000 samples per hypothesis")
    t0 = np.asarray(statistic(s0) if statistic else s0, dtype=float).ravel()
    t1 = np.asarray(statistic(s1) if statistic else s1, dtype=float).ravel()
    thr = np.asarray(thresholds, dtype=float)
    t0s, t1s = np.sort(t0), np.sort(t1)
    alpha_hat = 1.0 - np.searchsorted(t0s, thr, side="right") / len(t0s)
    beta_hat = np.searchsorted(t1s, thr, side="right") / len(t1s)
    a_se = np.sqrt(alpha_hat * (1 - alpha_hat) / len(t0s))
    b_se = np.sqrt(beta_hat * (1 - beta_hat) / len(t1s))
    return EmpiricalRoc(thr, alpha_hat, beta_hat, a_se, b_se)


def query_attack_roc(model_a: GaussianRowModel, model_b: GaussianRowModel, z, alphas,
                     trials: int, stream: RngStream) -> EmpiricalRoc:
    """Simulate the single-query attack: release ``V z`` under each model and
    run the likelihood-ratio test calibrated to levels ``alphas``."""
    z = np.asarray(z, dtype=float).ravel()
    n, d = model_a.means.shape
    chol = np.linalg.cholesky(model_a.row_cov)
    scale = math.sqrt(float(z @ model_a.row_cov @ z))
    direction = (model_b.means - model_a.means) @ z
    dn = np.linalg.norm(direction)
    if dn == 0:
        raise DomainError("models are indistinguishable through this seed")
    u = direction / dn

    def release(model, index):
        g = stream.generator(index).standard_normal((trials, n, d))
        rows = model.means[None] + g @ chol.T
        return rows @ z

    y0, y1 = release(model_a, 0), release(model_b, 1)
    base = model_a.means @ z
    stat = lambda y: (y - base) @ u / scale
    thr = -special.ndtri(np.asarray(alphas, dtype=float))
    return empirical_power(y0, y1, stat, thr)


# ---------------------------------------------------------------------------
# noisy gradient descent
# ---------------------------------------------------------------------------


def simulate_ngd(problem: RidgeProblem, config: NgdConfig, reps: int, stream: RngStream,
                 return_samples: bool = False):
    """Run the noisy update ``reps`` times from standard Gaussian initialisation.

    Returns the empirical row model (row means, row covariance pooled over
    rows), and the raw ``(reps, n, d)`` iterates when ``return_samples``.
    """
    if config.steps == "stationary":
        raise DomainError("simulation needs an integer number of steps")
    if reps < 2:
        raise DomainError("need at least two replications")
    ops = ngd_operators(problem, config.eta)
    n, d = problem.n, problem.d
    gen = stream.generator(0)
    W = gen.standard_normal((reps, n, d))
    noise = math.sqrt(2 * config.eta) * config.sigma
    for _ in range(int(config.steps)):
        W = W @ ops.M + ops.B + noise * gen.standard_normal((reps, n, d))
    means = W.mean(axis=0)
    centred = (W - means).reshape(-1, d)
    cov = centred.T @ centred / (n * (reps - 1))
    model = GaussianRowModel(means, cov)
    return (model, W) if return_samples else model


def ngd_moments_by_recursion(problem: RidgeProblem, config: NgdConfig) -> GaussianRowModel:
    """Row moments by iterating ``mu <- mu M + B`` and ``S <- M S M + 2 eta sigma^2 I``."""
    if config.steps == "stationary":
        raise DomainError("recursion needs an integer number of steps")
    ops = ngd_operators(problem, config.eta)
    mu = np.zeros((problem.n, problem.d))
    S = np.eye(problem.d)
    q = 2 * config.eta * config.sigma**2
    for _ in range(int(config.steps)):
        mu = mu @ ops.M + ops.B
        S = ops.M @ S @ ops.M + q * np.eye(problem.d)
    return GaussianRowModel(mu, S)
