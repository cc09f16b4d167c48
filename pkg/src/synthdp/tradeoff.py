"""Trade-off functions (type I -> minimal type II error) and their calculus.

Curves are immutable closed-form objects.  ``curve(alpha)`` evaluates the
type II error and ``curve.deriv(alpha)`` its derivative; both accept scalars
or arrays.  Tabulation only happens on export.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .numerics import DomainError, BracketError, find_root_bracketed

__all__ = [
    "TradeoffCurve",
    "GaussianCurve",
    "VarianceShiftCurve",
    "ChiSquaredCurve",
    "ShiftedCurve",
    "MaxCurve",
    "TabulatedCurve",
    "CrossoverPair",
    "gaussian_tradeoff",
    "variance_tradeoff",
    "chi2_variance_tradeoff",
    "sandwich_shift",
    "sandwich_upper",
    "pointwise_max",
    "identity_tradeoff",
    "tabulate",
    "to_csv",
]


def _arr(alpha):
    a = np.asarray(alpha, dtype=float)
    return a


def _out(x):
    return x[()] if np.ndim(x) == 0 else x


def _upper_z(alpha):
    # Phi^{-1}(1 - alpha), accurate for alpha near 0 and near 1.
    return -special.ndtri(alpha)


class TradeoffCurve:
    """Base class.  Subclasses implement ``_eval`` and ``_deriv`` on arrays."""

    kind: str = "abstract"

    def __call__(self, alpha):
        return self.eval(alpha)

    def eval(self, alpha):
        a = _arr(alpha)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            val = self._eval(np.clip(a, 0.0, 1.0))
        return _out(np.clip(val, 0.0, 1.0))

    def deriv(self, alpha):
        a = _arr(alpha)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return _out(self._deriv(a))

    def _eval(self, a):
        raise NotImplementedError

    def _deriv(self, a):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianCurve(TradeoffCurve):
    """``G_mu``: testing N(0,1) against N(mu,1)."""

    mu: float
    kind = "gaussian"

    def _eval(self, a):
        return special.ndtr(_upper_z(a) - self.mu)

    def _deriv(self, a):
        z = _upper_z(a)
        return -np.exp(self.mu * z - 0.5 * self.mu**2)


@dataclass(frozen=True)
class VarianceShiftCurve(TradeoffCurve):
    """Testing N(0, sigma1^2) against N(0, sigma2^2)."""

    sigma1: float
    sigma2: float
    kind = "variance_shift"

    @property
    def ratio(self) -> float:
        return self.sigma1 / self.sigma2

    def _x(self, a):
        if self.sigma1 <= self.sigma2:
            return -special.ndtri(0.5 * a)          # Phi^{-1}(1 - a/2)
        return -special.ndtri(0.5 * (1.0 - a))      # Phi^{-1}((1 + a)/2)

    def _eval(self, a):
        r = self.ratio
        x = self._x(a)
        if self.sigma1 <= self.sigma2:
            return 2.0 * special.ndtr(r * x) - 1.0
        return 2.0 * special.ndtr(-r * x)

    def _deriv(self, a):
        r = self.ratio
        x = self._x(a)
        return -r * np.exp(0.5 * x * x * (1.0 - r * r))


@dataclass(frozen=True)
class ChiSquaredCurve(TradeoffCurve):
    """Testing N(0, I_dof) against N(0, ratio * I_dof) through the chi-squared statistic."""

    ratio: float
    dof: int
    kind = "chi_squared"

    def _eval(self, a):
        k, lam = self.dof, self.ratio
        if lam == 1.0:
            return 1.0 - a
        if lam > 1.0:
            y = 2 * special.gammainccinv(k / 2, a)      # upper (1-a)-quantile
            return special.gammainc(k / 2, y / (2 * lam))
        y = 2 * special.gammaincinv(k / 2, a)           # lower a-quantile
        return special.gammaincc(k / 2, y / (2 * lam))

    def _deriv(self, a):
        k, lam = self.dof, self.ratio
        if lam == 1.0:
            return -np.ones_like(a)
        if lam > 1.0:
            y = 2 * special.gammainccinv(k / 2, a)
        else:
            y = 2 * special.gammaincinv(k / 2, a)
        # f(y/lam) / (lam f(y)) for the chi2_k density f.
        return -np.exp(-0.5 * k * math.log(lam) + 0.5 * y * (1.0 - 1.0 / lam))


@dataclass(frozen=True)
class ShiftedCurve(TradeoffCurve):
    """``max(0, base(alpha + gamma) - gamma)``, zero on ``(0, gamma)``."""

    base: TradeoffCurve
    gamma: float
    kind = "shifted"

    @property
    def degenerate(self) -> bool:
        return self.gamma >= 0.5

    def _active(self, a):
        return (a >= self.gamma) & (a + self.gamma < 1.0)

    def _eval(self, a):
        if self.gamma == 0:
            return self.base._eval(a)
        if self.degenerate:
            return np.zeros_like(a)
        shifted = np.minimum(a + self.gamma, 1.0)
        val = np.maximum(self.base._eval(shifted) - self.gamma, 0.0)
        return np.where(a < self.gamma, 0.0, val)

    def _deriv(self, a):
        if self.gamma == 0:
            return self.base._deriv(a)
        if self.degenerate:
            return np.zeros_like(a)
        shifted = np.clip(a + self.gamma, 0.0, 1.0)
        inner = self.base._deriv(shifted)
        val = self.base._eval(shifted) - self.gamma
        return np.where(self._active(a) & (val > 0), inner, 0.0)


@dataclass(frozen=True)
class CrossoverPair:
    c1: float
    c2: float

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise DomainError(f"crossovers must satisfy 0 < c1 < c2 < 1, got {self.c1}, {self.c2}")


@dataclass(frozen=True)
class MaxCurve(TradeoffCurve):
    """Pointwise maximum; the derivative follows the active component."""

    components: tuple
    crossovers: CrossoverPair | None = None
    kind = "max"

    def _stack(self, a):
        return np.stack([np.broadcast_to(c._eval(a), np.shape(a)) for c in self.components])

    def active_index(self, alpha):
        a = np.clip(_arr(alpha), 0.0, 1.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            # argmax returns the first maximiser: ties go to the first-listed component.
            return _out(np.argmax(self._stack(a), axis=0))

    def _eval(self, a):
        return self._stack(a).max(axis=0)

    def _deriv(self, a):
        vals = self._stack(np.clip(a, 0.0, 1.0))
        idx = np.argmax(vals, axis=0)
        out = np.empty(np.shape(a), dtype=float)
        for i, comp in enumerate(self.components):
            mask = idx == i
            if np.any(mask):
                out[mask] = np.broadcast_to(comp._deriv(np.asarray(a)[mask]), out[mask].shape)
        return out


@dataclass(frozen=True)
class TabulatedCurve(TradeoffCurve):
    """Piecewise-linear curve through ``(alphas, betas)``; used by the oracle."""

    alphas: np.ndarray
    betas: np.ndarray
    error_bound: float = 0.0
    kind = "tabulated"

    def _eval(self, a):
        return np.interp(a, self.alphas, self.betas)

    def _deriv(self, a):
        slopes = np.diff(self.betas) / np.diff(self.alphas)
        i = np.clip(np.searchsorted(self.alphas, a, side="right") - 1, 0, len(slopes) - 1)
        return slopes[i]


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def identity_tradeoff() -> GaussianCurve:
    return GaussianCurve(0.0)


def gaussian_tradeoff(mu: float) -> GaussianCurve:
    if mu < 0:
        raise DomainError("mu must be nonnegative")
    return GaussianCurve(float(mu))


def variance_tradeoff(sigma1: float, sigma2: float) -> VarianceShiftCurve:
    if sigma1 <= 0 or sigma2 <= 0:
        raise DomainError("standard deviations must be positive")
    return VarianceShiftCurve(float(sigma1), float(sigma2))


def chi2_variance_tradeoff(lambda_ratio: float, dof: int) -> ChiSquaredCurve:
    """Equal-eigenvalue Gaussian covariance test: ``lambda_ratio`` is the common
    eigenvalue of Sigma_v^{-1/2} Sigma_w Sigma_v^{-1/2}, ``dof = n * l``."""
    if lambda_ratio <= 0:
        raise DomainError("eigenvalue ratio must be positive")
    if dof < 1 or int(dof) != dof:
        raise DomainError("dof must be a positive integer")
    return ChiSquaredCurve(float(lambda_ratio), int(dof))


def sandwich_shift(base: TradeoffCurve, gamma: float) -> ShiftedCurve:
    """Lower sandwich of a curve whose laws are within ``gamma`` in total variation.

    ``gamma >= 0.5`` yields the degenerate (identically zero) curve.
    """
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    return ShiftedCurve(base, float(gamma))


def sandwich_upper(base: TradeoffCurve, gamma: float, alpha):
    """Upper sandwich ``min(1, base(alpha - gamma) + gamma)`` (1 for alpha < gamma)."""
    a = _arr(alpha)
    val = np.where(a < gamma, 1.0, np.asarray(base.eval(np.clip(a - gamma, 0, 1))) + gamma)
    return _out(np.minimum(val, 1.0))


def _find_crossovers(first: TradeoffCurve, second: TradeoffCurve, lo: float, hi: float,
                     extra: Sequence[float] = (), n_probes: int = 64) -> list[float]:
    def diff(x):
        return float(second.eval(x) - first.eval(x))

    # Probes cluster logistically near both ends, where crossings of
    # near-identity curves sit; ``extra`` adds probes around known jumps.
    probes = lo + (hi - lo) * special.expit(np.linspace(-14.0, 14.0, n_probes))
    probes = np.concatenate([probes, np.linspace(lo, hi, n_probes)[1:-1], list(extra)])
    probes = np.unique(probes[(probes >= lo) & (probes <= hi)])
    vals = np.array([diff(p) for p in probes])
    roots = []
    for i in range(len(probes) - 1):
        if vals[i] == 0 and i > 0:
            roots.append(float(probes[i]))
        elif vals[i] * vals[i + 1] < 0:
            try:
                roots.append(find_root_bracketed(diff, probes[i], probes[i + 1]))
            except BracketError:
                pass
    return roots


def pointwise_max(curves: Sequence[TradeoffCurve]) -> tuple[TradeoffCurve, CrossoverPair | None]:
    """Pointwise maximum and, for two components, the crossover pair.

    The pair is reported when the second component rises above the first on
    exactly one interval ``(c1, c2)`` strictly inside ``(0, 1)``.  The scan
    covers all of ``(0, 1)``: for a zero-extended shifted curve ``c1`` may
    coincide with the jump at ``gamma``.
    """
    curves = tuple(curves)
    if not curves:
        raise DomainError("need at least one curve")
    if len(curves) == 1:
        return curves[0], None
    pair = None
    if len(curves) == 2 and curves[0] != curves[1]:
        first, second = curves
        lo, hi = 1e-12, 1 - 1e-12
        extra = []
        if isinstance(second, ShiftedCurve):
            if second.degenerate:
                return MaxCurve(curves), None
            # A zero-extended shifted curve jumps at gamma; straddle it so a
            # branch switch at the jump is bracketed (and located) as well.
            g = second.gamma
            extra = [g * (1 - 1e-9), g * (1 + 1e-9), 1 - g * (1 + 1e-9), 1 - g * (1 - 1e-9)]
        roots = _find_crossovers(first, second, lo, hi, extra)
        if len(roots) == 2:
            mid = 0.5 * (roots[0] + roots[1])
            if second.eval(mid) > first.eval(mid):
                pair = CrossoverPair(roots[0], roots[1])
    return MaxCurve(curves, pair), pair


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def tabulate(curve: TradeoffCurve, n: int = 1000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate on ``n`` uniformly spaced interior points of (0, 1)."""
    alphas = (np.arange(n) + 1.0) / (n + 1.0)
    return alphas, np.asarray(curve.eval(alphas)), np.asarray(curve.deriv(alphas))


def to_csv(curve: TradeoffCurve, n: int = 1000) -> str:
    alphas, betas, derivs = tabulate(curve, n)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "beta", "derivative"])
    for row in zip(alphas, betas, derivs):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()
