"""American put options on zero-coupon bonds in an HJM forward-curve model.

The pricing pipeline smooths the put payoff, replaces the shift generator by
its bounded Yosida regularization, projects the dynamics onto a few basis
coordinates, and solves the resulting parabolic obstacle problem by projected
SOR.  An independent least-squares Monte Carlo pricer on the full curve model
cross-validates the chain.
"""

from .curves import (
    BasisSet,
    ForwardCurve,
    SpaceConfig,
    build_basis,
    flat_curve,
    inner_w,
    norm_w,
    project,
    sample_gaussian,
    shift,
    sup_bound_constant,
    yosida_apply,
)
from .dynamics import (
    PathState,
    PricingProblem,
    VolatilityModel,
    bond_price,
    euler_step,
    hjm_drift,
    payoff,
    sigma_of,
    simulate_paths,
)
from .galerkin import (
    GalerkinModel,
    effective_coefficients,
    galerkin_step,
    yosida_step,
)
from .lsmc import LsmcConfig, european_price, lsmc_price, martingale_diagnostic
from .pde import (
    PdeGrid,
    ValueSurface,
    build_operator,
    exercise_rule,
    make_obstacle,
    psor_solve,
    value_at,
)
from .smoothing import MollifiedPayoff, lp_mu_norm, mollified_payoff

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
