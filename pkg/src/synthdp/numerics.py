"""Numeric kernel: special functions, root finding, small linear algebra,
characteristic-function inversion and seeded random streams.

Everything here is pure given its inputs.  Heavy lifting is delegated to
scipy/numpy; this module pins the contracts (domains, tolerances, sign
conventions) the rest of the package relies on.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

__all__ = [
    "DomainError",
    "BracketError",
    "TruncationWarning",
    "Grid1D",
    "DensityGrid",
    "RngStream",
    "normal_funcs",
    "chi2_funcs",
    "bessel_k",
    "find_root_bracketed",
    "matrix_sqrt_psd",
    "top_singular_triplet",
    "invert_characteristic_function_1d",
    "rng_gaussian_matrix",
]

DEFAULT_ROOT_TOL = 4 * np.finfo(float).eps


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class BracketError(ValueError):
    """The supplied interval does not bracket a sign change."""


class TruncationWarning(UserWarning):
    """The characteristic function has not decayed inside the integration window."""


# ---------------------------------------------------------------------------
# grids and densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n_points: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.n_points < 2:
            raise DomainError("grid needs at least two points")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    @classmethod
    def symmetric(cls, half_width: float, n_points: int = 2**15) -> "Grid1D":
        return cls(-half_width, half_width, n_points)


@dataclass(frozen=True)
class DensityGrid:
    """A 1-D density tabulated on a uniform grid."""

    grid: Grid1D
    values: np.ndarray
    mass: float
    truncation_bound: float = 0.0
    log_available: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def cell_masses(self) -> np.ndarray:
        """Trapezoid weights times density; sums to ``mass``."""
        w = np.full(self.grid.n_points, self.grid.spacing)
        w[0] = w[-1] = 0.5 * self.grid.spacing
        return self.values * w


def _trapezoid(values: np.ndarray, dx: float) -> float:
    return float(dx * (values.sum() - 0.5 * (values[0] + values[-1])))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Immutable descriptor of an independent random substream.

    Generators are Philox (counter based) keyed through ``SeedSequence`` so
    that ``(master_seed, stream_id, index)`` fully determines the draws,
    independent of the order in which substreams are consumed.
    """

    master_seed: int
    stream_id: int = 0

    def child(self, stream_id: int) -> "RngStream":
        # Nest the id so children of different parents never collide.
        return RngStream(self.master_seed, _combine_ids(self.stream_id, stream_id))

    def generator(self, index: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id) & (2**64 - 1), int(index)),
        )
        return np.random.Generator(np.random.Philox(seq))


def _combine_ids(parent: int, child: int) -> int:
    # splitmix64-style mixing; deterministic and order-sensitive.
    z = (parent * 0x9E3779B97F4A7C15 + child + 1) & (2**64 - 1)
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
    return z ^ (z >> 31)


def rng_gaussian_matrix(stream: RngStream, rows: int, cols: int, std: float = 1.0,
                        index: int = 0) -> np.ndarray:
    if std < 0:
        raise DomainError("std must be nonnegative")
    draws = stream.generator(index).standard_normal((rows, cols))
    return std * draws


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def normal_funcs(x_or_p, which: str = "cdf"):
    """Standard normal cdf, quantile or pdf (vectorised)."""
    x = np.asarray(x_or_p, dtype=float)
    if which == "cdf":
        out = special.ndtr(x)
    elif which == "pdf":
        out = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    elif which == "quantile":
        if np.any((x <= 0) | (x >= 1)) or np.any(np.isnan(x)):
            raise DomainError("normal quantile requires 0 < p < 1")
        out = special.ndtri(x)
    else:
        raise ValueError(f"unknown function {which!r}")
    return out[()] if out.ndim == 0 else out


def chi2_funcs(k: int, x_or_p, which: str = "cdf"):
    """Chi-squared (``k`` degrees of freedom) cdf, quantile or pdf."""
    if k < 1 or int(k) != k:
        raise DomainError("degrees of freedom must be a positive integer")
    x = np.asarray(x_or_p, dtype=float)
    if which == "quantile":
        if np.any((x <= 0) | (x >= 1)) or np.any(np.isnan(x)):
            raise DomainError("chi2 quantile requires 0 < p < 1")
        # Invert whichever tail is better conditioned.
        out = np.where(x < 0.5, 2 * special.gammaincinv(k / 2, x),
                       2 * special.gammainccinv(k / 2, 1 - x))
    else:
        if np.any(x < 0):
            raise DomainError("chi2 cdf/pdf require x >= 0")
        if which == "cdf":
            out = special.chdtr(k, x)
        elif which == "pdf":
            with np.errstate(divide="ignore"):
                logpdf = special.xlogy(k / 2 - 1, x) - x / 2 - (k / 2) * math.log(2) - special.gammaln(k / 2)
            out = np.exp(logpdf)
        else:
            raise ValueError(f"unknown function {which!r}")
    return out[()] if out.ndim == 0 else out


def bessel_k(order, x, log: bool = False):
    """Modified Bessel function of the second kind, ``K_order(x)``.

    With ``log=True`` returns ``log K_order(x)``, which stays finite where
    the plain value overflows (large order, small argument).
    """
    nu = abs(float(order))
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("bessel_k requires x > 0")
    with np.errstate(over="ignore"):
        scaled = special.kve(nu, x)
    logk = np.log(scaled) - x
    bad = ~np.isfinite(logk)
    if np.any(bad):
        logk = np.where(bad, _log_bessel_k_recurrence(nu, np.where(bad, x, 1.0)), logk)
    if log:
        out = logk
    else:
        with np.errstate(over="ignore"):
            out = np.exp(logk)
    return out[()] if out.ndim == 0 else out


def _log_bessel_k_recurrence(nu: float, x: np.ndarray) -> np.ndarray:
    # K_{m+1} = K_{m-1} + (2m/x) K_m is stable upwards; carry the ratio
    # K_{m+1}/K_m so no intermediate value overflows.
    base = nu - math.floor(nu)
    logk = np.log(special.kve(base, x)) - x
    if nu == base:
        return logk
    ratio = special.kve(base + 1, x) / special.kve(base, x)
    logk = logk + np.log(ratio)
    m = base + 1
    while m < nu - 0.5:
        ratio = 1.0 / ratio + 2 * m / x
        logk = logk + np.log(ratio)
        m += 1
    return logk


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------


def find_root_bracketed(f: Callable[[float], float], lo: float, hi: float,
                        tol: float = DEFAULT_ROOT_TOL) -> float:
    """Brent's method on ``[lo, hi]``; raises BracketError without a sign change."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"f({lo})={flo} and f({hi})={fhi} have the same sign")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matrix_sqrt_psd(m: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Symmetric square root (or inverse square root) of a PSD matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise DomainError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise DomainError("matrix is not symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    if evals.min() < -1e-10 * scale:
        raise DomainError(f"matrix is indefinite (min eigenvalue {evals.min():.3g})")
    evals = np.clip(evals, 0.0, None)
    if inverse:
        if evals.min() <= 0:
            raise DomainError("inverse square root of a singular matrix")
        root = 1.0 / np.sqrt(evals)
    else:
        root = np.sqrt(evals)
    out = (evecs * root) @ evecs.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class SingularTriplet:
    sigma_max: float
    left: np.ndarray
    right: np.ndarray
    degenerate: bool = False

    def __iter__(self):
        return iter((self.sigma_max, self.left, self.right))


def top_singular_triplet(m: np.ndarray) -> SingularTriplet:
    """Largest singular value with its unit singular vectors.

    Sign convention: the largest-magnitude entry of ``right`` is positive.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not np.any(m):
        right = np.zeros(m.shape[1])
        right[0] = 1.0
        left = np.zeros(m.shape[0])
        left[0] = 1.0
        return SingularTriplet(0.0, left, right, degenerate=True)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    left, right = u[:, 0], vt[0]
    if right[np.argmax(np.abs(right))] < 0:
        left, right = -left, -right
    return SingularTriplet(float(s[0]), left, right)


# ---------------------------------------------------------------------------
# characteristic-function inversion
# ---------------------------------------------------------------------------


def _decay_window(phi, start: float, threshold: float, t_cap: float) -> float:
    t = max(start, 1e-3)
    while abs(phi(np.array([t]))[0]) >= threshold and t < t_cap:
        t *= 2.0
    return min(t, t_cap)


def invert_characteristic_function_1d(
    phi: Callable[[np.ndarray], np.ndarray],
    grid: Grid1D,
    *,
    decay_threshold: float = 1e-12,
    max_points: int = 2**23,
    warn_above: float = 1e-8,
    clip_tol: float = 1e-8,
) -> DensityGrid:
    """Density on ``grid`` of the law whose characteristic function is ``phi``.

    The inversion integral is discretised with the trapezoid rule at the
    frequency spacing that makes the grid one period, evaluated by FFT.  The
    frequency window is widened (by oversampling the output grid) until
    ``|phi| < decay_threshold`` at its edge or ``max_points`` is reached.  The
    neglected tail ``(1/pi) * int_T^inf |phi|`` is reported as
    ``truncation_bound``.
    """
    n = grid.n_points
    ds = grid.spacing
    dt = 2 * math.pi / (n * ds)
    t_cap = 0.5 * max_points * dt
    t_edge = _decay_window(phi, 0.5 * n * dt, decay_threshold, t_cap)
    over = 1
    while 0.5 * over * n * dt < t_edge and over * n < max_points:
        over *= 2
    total = over * n
    t_max = 0.5 * total * dt

    k = np.arange(total)
    t = (k - total // 2) * dt
    f = np.asarray(phi(t), dtype=complex) * np.exp(-1j * t * grid.lo)
    spec = np.fft.fft(f)
    # t_k = (k - total//2) dt and s_j = lo + j ds/over leave a centring phase.
    phase = np.exp(2j * math.pi * (total // 2) * np.arange(total) / total)
    dens_full = (dt / (2 * math.pi)) * (spec * phase).real
    dens = dens_full[::over][:n].copy()

    tail = _tail_bound(phi, t_max)
    if tail > warn_above:
        warnings.warn(
            f"characteristic function not negligible beyond |t|={t_max:.4g}; "
            f"estimated truncation error {tail:.3g}",
            TruncationWarning,
            stacklevel=2,
        )
    neg = dens < 0
    if np.any(dens[neg] < -clip_tol):
        warnings.warn(f"density dips to {dens.min():.3g} before clipping", TruncationWarning,
                      stacklevel=2)
    dens[neg] = 0.0
    return DensityGrid(grid, dens, _trapezoid(dens, ds), truncation_bound=tail)


def _tail_bound(phi, t0: float) -> float:
    # Fit a local power law |phi(t)| ~ a (t/t0)^-p between t0 and 2 t0; the
    # tail (1/pi) int_t0^inf |phi| is then a t0 / (pi (p - 1)), infinite for p <= 1.
    a0, a1 = np.abs(np.asarray(phi(np.array([t0, 2 * t0])), dtype=complex))
    if a0 == 0:
        return 0.0
    if a1 == 0:
        return float(a0 * t0 / math.pi)
    p = math.log2(a0 / a1)
    if p <= 1.0:
        return math.inf
    return float(a0 * t0 / (math.pi * (p - 1)))
