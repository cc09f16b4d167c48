"""Privacy amplification by releasing ``(V) Z`` on hidden Gaussian seeds.

The lower bound ``h`` is the pointwise maximum of the post-processing floor
``G_{Delta/sigma_theta}`` and a limiting variance-shift (or chi-squared)
trade-off, shifted down by a CLT total-variation allowance.  Every bound here
is stated modulo that allowance's universal constant ``C``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .numerics import DomainError, RngStream
from .tradeoff import (
    TradeoffCurve,
    chi2_variance_tradeoff,
    gaussian_tradeoff,
    pointwise_max,
    sandwich_shift,
    variance_tradeoff,
)

__all__ = [
    "MechanismSpec",
    "RenyiEstimate",
    "Placement",
    "worst_case_placement",
    "single_point_shift",
    "single_point_bound",
    "multi_point_bound",
    "renyi_gaussian_shift",
    "renyi_variance_max",
    "renyi_multi_upper",
    "fdp_to_rdp_mc",
    "post_plateau_slope",
    "SHIFT_MODES",
    "SAMPLERS",
]

SHIFT_MODES = ("universal", "moment")
SAMPLERS = ("probit", "uniform")


@dataclass(frozen=True)
class MechanismSpec:
    """Parameters of the seeded release ``(sigma_theta N + v) Z``.

    ``shift`` selects the total-variation allowance of the single-point bound:
    ``"universal"`` uses ``C / d``; ``"moment"`` uses ``C_eff / d`` with the
    moment-dependent factor ``C (9 - 6 / (1 + d sigma_theta^2 / w*^2)^2)``.
    """

    sigma_theta: float
    d: int
    Delta: float
    sigma_z: float = 1.0
    n: int = 1
    l: int = 1
    C: float = 1.0
    shift: str = "universal"

    def __post_init__(self):
        if not self.sigma_theta > 0 or not self.sigma_z > 0:
            raise DomainError("sigma_theta and sigma_z must be positive")
        for name in ("d", "n", "l"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise DomainError(f"{name} must be a positive integer, got {val}")
            object.__setattr__(self, name, int(val))
        if self.Delta < 0:
            raise DomainError("Delta must be nonnegative")
        if not self.C > 0:
            raise DomainError("C must be positive")
        if self.shift not in SHIFT_MODES:
            raise DomainError(f"shift must be one of {SHIFT_MODES}, got {self.shift!r}")


@dataclass(frozen=True)
class RenyiEstimate:
    alpha: float
    value: float
    stderr: float
    replications: int
    samples_per_rep: int
    spread: float = 0.0          # replication standard deviation
    infinite: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Placement:
    v_star: float
    w_star: float
    r: float

    def __iter__(self):
        return iter((self.v_star, self.w_star, self.r))


def worst_case_placement(s: float, Delta: float) -> Placement:
    """Means ``v*, w* = v* + Delta`` with ``v* w* = s``; ``r = v*/w*``.

    ``r`` equals the variance ratio ``(s + v*^2)/(s + w*^2)`` because
    ``s = v* w*``.  ``v*`` is computed in a cancellation-free form.
    """
    if not s > 0:
        raise DomainError("s must be positive")
    if Delta < 0:
        raise DomainError("Delta must be nonnegative")
    root = math.sqrt(Delta * Delta + 4.0 * s)
    v = 2.0 * s / (root + Delta)
    w = v + Delta
    return Placement(v, w, v / w)


def single_point_shift(spec: MechanismSpec) -> float:
    d = spec.d
    if spec.shift == "universal":
        return spec.C / d
    s = spec.sigma_theta**2 * d
    w = worst_case_placement(s, spec.Delta).w_star
    ratio = d * spec.sigma_theta**2 / (w * w)
    return spec.C * (9.0 - 6.0 / (1.0 + ratio) ** 2) / d


def single_point_bound(spec: MechanismSpec) -> TradeoffCurve:
    """Lower bound ``h`` for one synthetic output (n = l = 1).

    The returned curve's ``crossovers`` attribute holds ``(c1, c2)`` when the
    variance branch is active on an interior interval.
    """
    if spec.n != 1 or spec.l != 1:
        raise DomainError("single_point_bound needs n = l = 1")
    floor = gaussian_tradeoff(spec.Delta / spec.sigma_theta)
    s = spec.sigma_theta**2 * spec.d
    v, w, _ = worst_case_placement(s, spec.Delta)
    branch = sandwich_shift(
        variance_tradeoff(math.sqrt(s + v * v), math.sqrt(s + w * w)), single_point_shift(spec)
    )
    curve, _ = pointwise_max([floor, branch])
    return curve


def multi_point_bound(spec: MechanismSpec) -> TradeoffCurve:
    """Lower bound ``h`` for an ``n x l`` release through the chi-squared branch."""
    n, l, d = spec.n, spec.l, spec.d
    if d <= n or d < l:
        raise DomainError(f"multi-point bound needs d >= max(n, l) and d > n; got d={d}, n={n}, l={l}")
    floor = gaussian_tradeoff(spec.Delta / spec.sigma_theta)
    s = spec.sigma_theta**2 * (d - n)
    v, w, _ = worst_case_placement(s, spec.Delta)
    lam = (s + w * w) / (s + v * v)
    gamma = spec.C * n * math.sqrt(l / (d - n))
    branch = sandwich_shift(chi2_variance_tradeoff(lam, n * l), gamma)
    curve, _ = pointwise_max([floor, branch])
    return curve


# ---------------------------------------------------------------------------
# closed-form Renyi values
# ---------------------------------------------------------------------------


def renyi_gaussian_shift(alpha: float, Delta: float, sigma: float) -> float:
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    return alpha * Delta * Delta / (2.0 * sigma * sigma)


def renyi_variance_max(alpha: float, s: float, Delta: float) -> float:
    """Largest order-alpha divergence between the limiting variance-shifted
    Gaussians over placements at distance ``Delta``; ``inf`` when the mixture
    variance ``alpha r + 1 - alpha`` is not positive."""
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    r = worst_case_placement(s, Delta).r
    if r == 1.0:
        return 0.0
    mix = alpha * r + 1.0 - alpha
    if mix <= 0:
        return math.inf
    # alpha log r - log(1 - alpha (1 - r)), written with log1p for r near 1.
    eps = 1.0 - r
    val = (alpha * math.log1p(-eps) - math.log1p(-alpha * eps)) / (2.0 * (alpha - 1.0))
    return max(val, 0.0)


def renyi_multi_upper(alpha: float, s: float, Delta: float, n: int, l: int) -> float:
    return n * l * renyi_variance_max(alpha, s, Delta)


# ---------------------------------------------------------------------------
# Monte Carlo f-DP -> RDP conversion
# ---------------------------------------------------------------------------


def _replication(curve: TradeoffCurve, alpha: float, L: int, gen: np.random.Generator,
                 sampler: str, tau: float) -> float:
    """(1/(alpha-1)) log E_U |f'(U)|^{1-alpha} for one replication."""
    if sampler == "uniform":
        u = gen.random(L)
        logw = None
    else:
        # Self-normalised importance sampling with a probit proposal: U = Phi(tau g)
        # puts far more mass near 0 and 1, where |f'|^{1-alpha} concentrates.
        x = tau * gen.standard_normal(L)
        u = np.clip(special.ndtr(x), 1e-300, 1.0 - 2.0**-53)
        logw = -0.5 * x * x * (1.0 - 1.0 / (tau * tau)) + math.log(tau)
    with np.errstate(divide="ignore"):
        logd = np.log(np.abs(np.asarray(curve.deriv(u), dtype=float)))
    terms = (1.0 - alpha) * logd
    if np.any(np.isnan(terms)) or np.any(terms == np.inf):
        return math.inf
    if logw is None:
        lse = special.logsumexp(terms) - math.log(L)
    else:
        lse = special.logsumexp(terms + logw) - special.logsumexp(logw)
    return float(lse / (alpha - 1.0))


def fdp_to_rdp_mc(
    curve: TradeoffCurve,
    alpha: float,
    L: int = 500_000,
    M: int = 50,
    stream: RngStream | None = None,
    *,
    sampler: str = "probit",
    tau: float = 4.0,
    workers: int = 1,
) -> RenyiEstimate:
    """Monte Carlo estimate of the RDP value implied by a trade-off curve.

    Each replication ``m`` draws from ``stream.child(m)``, so the result does
    not depend on ``workers``.  ``stderr`` is the replication standard
    deviation divided by ``sqrt(M)``; ``spread`` is the standard deviation
    itself.  ``sampler="uniform"`` draws ``U ~ Unif(0, 1)`` directly.
    """
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    if L < 1 or M < 1:
        raise DomainError("L and M must be positive")
    if sampler not in SAMPLERS:
        raise DomainError(f"sampler must be one of {SAMPLERS}")
    if stream is None:
        stream = RngStream(0)
    # The conversion is finite only when the curve reaches 0 at alpha = 1.
    if float(curve.eval(1.0 - 1e-9)) <= 0.0:
        return RenyiEstimate(alpha, math.inf, 0.0, M, L, 0.0, True)

    def run(m: int) -> float:
        return _replication(curve, alpha, L, stream.child(m).generator(), sampler, tau)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(run, range(M)))
    else:
        vals = [run(m) for m in range(M)]
    vals = np.array(vals)
    if not np.all(np.isfinite(vals)):
        return RenyiEstimate(alpha, math.inf, 0.0, M, L, 0.0, True)
    value = float(np.mean(vals))
    spread = float(np.std(vals, ddof=1)) if M > 1 else 0.0
    return RenyiEstimate(alpha, value, spread / math.sqrt(M), M, L, spread, False)


def post_plateau_slope(ds: Sequence[float], values: Sequence[float], plateau: float,
                       frac: float = 0.9) -> tuple[float, np.ndarray]:
    """Least-squares log-log slope over points whose value is below ``frac * plateau``.

    ``plateau`` is the RDP value of the post-processing floor; estimates at or
    near it mean the variance branch has not yet taken over.  Returns the slope
    and the boolean mask of points used (nan slope if fewer than two).
    """
    ds = np.asarray(ds, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.isfinite(values) & (values > 0) & (values < frac * plateau)
    if mask.sum() < 2:
        return math.nan, mask
    slope = np.polyfit(np.log(ds[mask]), np.log(values[mask]), 1)[0]
    return float(slope), mask
