"""Privacy accounting for synthetic data released by private linear regression.

Submodules: ``numerics`` (numeric kernel), ``tradeoff`` (f-DP curves),
``mechanisms`` (ridge / NGD / adversarial seeds), ``amplification`` (bounds
for seeded synthetic releases and RDP conversion), ``oracle`` (brute-force
verification) and ``cli``.
"""
from .amplification import (
    MechanismSpec,
    RenyiEstimate,
    fdp_to_rdp_mc,
    multi_point_bound,
    renyi_gaussian_shift,
    renyi_multi_upper,
    renyi_variance_max,
    single_point_bound,
    worst_case_placement,
)
from .numerics import DomainError, Grid1D, RngStream
from .tradeoff import (
    TradeoffCurve,
    chi2_variance_tradeoff,
    gaussian_tradeoff,
    pointwise_max,
    sandwich_shift,
    variance_tradeoff,
)

__version__ = "0.1.0"
