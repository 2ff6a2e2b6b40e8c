"""maxlife: pricing and hedging of equity-linked life insurance written on
the maximum of several assets, under a regime-switching VAR market model
with heteroscedastic residuals."""

__version__ = "0.1.0"

from .actuarial import (
    LifeTable,
    MortalityTilt,
    TiltedMortality,
    load_life_table,
    mortality_density,
    survival,
    tilted_mortality,
)
from .hedging import (
    HedgePosition,
    cross_moment,
    hedge_for_product,
    lambda_vector,
    omega,
    strategy,
    sum_insured_cross_expectation,
)
from .mc import (
    Ensemble,
    McEstimate,
    claim_payoff,
    mc_hedge_residual,
    mc_price,
    sample_lifetimes,
    simulate_physical_ensemble,
    simulate_risk_neutral,
)
from .measures import (
    DiscountedExpectation,
    PosteriorWeights,
    discounted_factor_expectation,
    girsanov_kernel,
    project_law,
    regime_posterior,
    shifted_law,
    state_price_density,
)
from .model_io import load_model, load_product_doc, model_from_dict, product_from_dict
from .msvar import (
    CovarianceConstant,
    CovarianceVechGarch,
    GaussianLaw,
    MarketState,
    ModelSpec,
    RegimePath,
    StackedSystem,
    ValidatedModel,
    build_stacked_system,
    conditional_law,
    covariance_sequence,
    initial_state,
    law_at_state,
    simulate_physical,
    validate_spec,
)
from .numerics import (
    BlockLowerSystem,
    OrthantQuery,
    cholesky_lower,
    mvn_cdf,
    solve_unit_block_lower,
    unvech,
    vech,
)
from .pricing import (
    MaxClaim,
    PriceResult,
    ProductSpec,
    bayesian_average,
    call_on_max,
    event_geometry,
    forward_max,
    premium,
    put_on_max,
    zcb_price,
)
