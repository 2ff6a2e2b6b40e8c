"""Rainbow-option analytics and single premiums.

Option prices condition on the regime history (or posterior-average over
it), sum over future regime paths with their chain probabilities, and
reduce every term to a Gaussian orthant probability under a forward- or
discount-shifted law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .actuarial import LifeTable, MortalityTilt, tilted_mortality
from .errors import DimensionMismatch, GuaranteeZeroInCall, MaxlifeError
from .measures import (
    _walk_from,
    discounted_factor_expectation,
    project_law,
    regime_posterior,
    shifted_law,
)
from .msvar import (
    MarketState,
    RegimePath,
    ValidatedModel,
    law_at_state,
    recursion_at_state,
)
from .numerics import OrthantQuery, mvn_cdf

DEFAULT_MVN_TOL = 1e-6


@dataclass(frozen=True)
class MaxClaim:
    """Claim on the maximum of weighted prices at step k with guarantee G_k."""

    k: int
    weights: np.ndarray
    guarantee: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).ravel()
        if np.any(w <= 0.0):
            raise DimensionMismatch("claim weights must be strictly positive")
        if self.guarantee < 0.0:
            raise DimensionMismatch("guarantee must be nonnegative")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class EventGeometry:
    """Half-space description {L xtilde_k <= b} of a winning-asset event."""

    asset: int
    kind: str  # "call" | "put" | "forward"
    matrix: np.ndarray
    bound: np.ndarray


def event_geometry(claim: MaxClaim, asset: int, kind: str) -> EventGeometry:
    """Event geometry for asset ``asset`` (0-based) being the maximum.

    Comparison rows encode xtilde_j - xtilde_i <= ln(w_i / w_j); the final
    row keeps the winner above (call) or below (put) the guarantee.  The
    "forward" kind drops the guarantee row (the G -> 0 limit of the call).
    """
    w = claim.weights
    n_x = w.size
    if not 0 <= asset < n_x:
        raise DimensionMismatch(f"asset index {asset} out of range")
    rows = []
    bounds = []
    for j in range(n_x):
        if j == asset:
            continue
        row = np.zeros(n_x)
        row[j] = 1.0
        row[asset] = -1.0
        rows.append(row)
        bounds.append(math.log(w[asset] / w[j]))
    if kind == "call":
        if claim.guarantee <= 0.0:
            raise GuaranteeZeroInCall(
                "call-on-max geometry needs G > 0; price the guarantee-free "
                "leg with forward_max")
        row = np.zeros(n_x)
        row[asset] = -1.0
        rows.append(row)
        bounds.append(math.log(w[asset] / claim.guarantee))
    elif kind == "put":
        row = np.zeros(n_x)
        row[asset] = 1.0
        rows.append(row)
        bounds.append(math.log(claim.guarantee / w[asset])
                      if claim.guarantee > 0.0 else -math.inf)
    elif kind != "forward":
        raise DimensionMismatch(f"unknown event kind {kind!r}")
    matrix = np.array(rows).reshape(len(rows), n_x)
    return EventGeometry(asset, kind, matrix, np.array(bounds))


@dataclass(frozen=True)
class PriceResult:
    """Price with its audit trail: enumerated paths, pruned chain mass and
    the orthant-probability tolerance used."""

    value: float
    path_count: int
    truncation_bound: float
    mvn_tol: float

    def __add__(self, other: "PriceResult") -> "PriceResult":
        return PriceResult(self.value + other.value,
                           self.path_count + other.path_count,
                           self.truncation_bound + other.truncation_bound,
                           max(self.mvn_tol, other.mvn_tol))

    def scaled(self, factor: float) -> "PriceResult":
        return replace(self, value=self.value * factor)


def _finalize(value: float, paths: int, trunc: float, tol: float,
              clamp: bool = True) -> PriceResult:
    if clamp and value < 0.0:
        slack = 10.0 * tol * max(paths, 1) + 1e-12
        if value < -slack:
            raise MaxlifeError(
                f"price {value} negative beyond quadrature tolerance {slack}")
        value = 0.0
    return PriceResult(value, paths, trunc, tol)


def condition_contexts(model: ValidatedModel,
                       state: MarketState) -> list[tuple[float, MarketState]]:
    """Regime-conditioning contexts for a valuation state.

    With a known regime history (or t = 0) there is a single unit-weight
    context; otherwise the posterior over regime histories supplies the
    weights.
    """
    if state.t == 0:
        return [(1.0, replace(state, regimes=()))]
    if state.regimes is not None:
        return [(1.0, state)]
    post = regime_posterior(model, state.y_hist)
    return [(float(wgt), replace(state, regimes=path.states))
            for path, wgt in zip(post.paths, post.weights) if wgt > 0.0]


def _iter_window_paths(model: ValidatedModel, ctx: MarketState, k: int):
    """Enumerate future regime paths over (t, k] with their covariances."""
    prev = ctx.regimes[-1] if ctx.t > 0 else None
    rec = recursion_at_state(model, ctx)
    return _walk_from(model, prev, rec, k - ctx.t)


def _event_probability(model: ValidatedModel, law, geometry: EventGeometry,
                       k: int, tol: float) -> float:
    proj = project_law(model, law, geometry.matrix, k)
    if geometry.bound.size == 0:
        return 1.0
    return mvn_cdf(OrthantQuery(geometry.bound, proj.mean, proj.cov, tol))


def zcb_price(model: ValidatedModel, state: MarketState, k: int,
              mvn_tol: float = DEFAULT_MVN_TOL) -> PriceResult:
    """Zero-coupon bond price at t maturing at k (regime-path sum of the
    discount exponents)."""
    if not state.t < k <= model.horizon:
        raise DimensionMismatch(f"maturity {k} outside ({state.t}, {model.horizon}]")
    total = 0.0
    paths = 0
    trunc = 0.0
    for weight, ctx in condition_contexts(model, state):
        truncated, walk = _iter_window_paths(model, ctx, k)
        for states, prob, sigmas in walk:
            path = RegimePath((ctx.t + 1, k), states, prob)
            law = law_at_state(model, ctx, path, "risk_neutral", sigmas)
            disc = discounted_factor_expectation(model, law, ctx.t, k)
            total += weight * prob * disc.prefactor
            paths += 1
        trunc += weight * truncated[0]
    return _finalize(total, paths, trunc, mvn_tol)


def _option_value(model: ValidatedModel, state: MarketState, claim: MaxClaim,
                  kind: str, mvn_tol: float) -> PriceResult:
    """Common regime-path sum behind call_on_max / put_on_max / forward_max."""
    k = claim.k
    if not state.t < k <= model.horizon:
        raise DimensionMismatch(f"maturity {k} outside ({state.t}, {model.horizon}]")
    if claim.weights.size != model.n_x:
        raise DimensionMismatch("claim weights must cover every asset")
    sign = -1.0 if kind == "put" else 1.0
    total = 0.0
    paths = 0
    trunc = 0.0
    for weight, ctx in condition_contexts(model, state):
        x_t = ctx.asset_prices(model)
        geoms = [event_geometry(claim, i, kind) for i in range(model.n_x)]
        truncated, walk = _iter_window_paths(model, ctx, k)
        for states, prob, sigmas in walk:
            path = RegimePath((ctx.t + 1, k), states, prob)
            law = law_at_state(model, ctx, path, "risk_neutral", sigmas)
            acc = 0.0
            if kind != "forward":
                disc = discounted_factor_expectation(model, law, ctx.t, k)
                bond = disc.prefactor
            for i, geom in enumerate(geoms):
                fwd = shifted_law(model, law, [(i, k)])
                p_fwd = _event_probability(model, fwd, geom, k, mvn_tol)
                acc += sign * claim.weights[i] * x_t[i] * p_fwd
                if kind != "forward":
                    p_disc = _event_probability(model, disc.law, geom, k, mvn_tol)
                    acc -= sign * claim.guarantee * bond * p_disc
            total += weight * prob * acc
            paths += 1
        trunc += weight * truncated[0]
    return _finalize(total, paths, trunc, mvn_tol)


def call_on_max(model: ValidatedModel, state: MarketState, claim: MaxClaim,
                mvn_tol: float = DEFAULT_MVN_TOL) -> PriceResult:
    """Price of the call on the maximum of weighted prices, strike G_k."""
    if claim.guarantee <= 0.0:
        raise GuaranteeZeroInCall("call requires G > 0 (see forward_max)")
    return _option_value(model, state, claim, "call", mvn_tol)


def put_on_max(model: ValidatedModel, state: MarketState, claim: MaxClaim,
               mvn_tol: float = DEFAULT_MVN_TOL) -> PriceResult:
    """Price of the put on the maximum of weighted prices, strike G_k."""
    if claim.guarantee == 0.0:
        return PriceResult(0.0, 0, 0.0, mvn_tol)
    return _option_value(model, state, claim, "put", mvn_tol)


def forward_max(model: ValidatedModel, state: MarketState, claim: MaxClaim,
                mvn_tol: float = DEFAULT_MVN_TOL) -> PriceResult:
    """Discounted expectation of the maximum itself (guarantee row dropped)."""
    return _option_value(model, state, claim, "forward", mvn_tol)


_PRODUCT_KINDS = ("segregated_term", "segregated_endowment",
                  "unit_linked_term", "unit_linked_endowment")


@dataclass(frozen=True)
class ProductSpec:
    """Product description: kind, issue age, horizon and claim schedules.

    ``guarantees[k-1]`` and ``weights[k-1]`` define the claim at step k for
    k = 1..horizon.
    """

    kind: str
    age: int
    horizon: int
    guarantees: np.ndarray
    weights: np.ndarray
    alive: bool = True

    def __post_init__(self) -> None:
        if self.kind not in _PRODUCT_KINDS:
            raise DimensionMismatch(
                f"unknown product kind {self.kind!r}; expected one of {_PRODUCT_KINDS}")
        g = np.asarray(self.guarantees, dtype=float).ravel()
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if g.shape != (self.horizon,) or w.shape[0] != self.horizon:
            raise DimensionMismatch("claim schedules must cover steps 1..horizon")
        if np.any(g < 0.0) or np.any(w <= 0.0):
            raise DimensionMismatch("guarantees must be >= 0, weights > 0")
        object.__setattr__(self, "guarantees", g)
        object.__setattr__(self, "weights", w)

    def claim(self, k: int) -> MaxClaim:
        return MaxClaim(k, self.weights[k - 1], float(self.guarantees[k - 1]))


def _mortality_factors(table: LifeTable, x: int, t: int, horizon: int,
                       tilt: MortalityTilt) -> tuple[np.ndarray, float]:
    """Deferred death probabilities for years t+1..horizon and the survival
    probability to the horizon, conditional on being alive at t, under the
    (possibly tilted) lifetime law."""
    tm = tilted_mortality(table, x, horizon, tilt)
    alive = 1.0 - (float(tm.cumulative[t - 1]) if t > 0 else 0.0)
    if alive <= 0.0:
        raise MaxlifeError("lifetime law assigns zero mass to being alive at t")
    return tm.deferred_death[t:] / alive, float(tm.survive_horizon) / alive


def premium(product: ProductSpec, model: ValidatedModel, state: MarketState,
            table: LifeTable, tilt: MortalityTilt | None = None,
            mvn_tol: float = DEFAULT_MVN_TOL,
            raw_guarantee_leg: bool = False) -> PriceResult:
    """Single premium of an equity-linked product at the valuation state.

    Segregated products value puts on the maximum weighted by death-year
    (term) or survival (endowment) probabilities; unit-linked products add
    the guaranteed floor, discounted with the zero-coupon bond unless
    ``raw_guarantee_leg`` reproduces the undiscounted convention.
    """
    t, horizon = state.t, product.horizon
    if not product.alive:
        return PriceResult(0.0, 0, 0.0, mvn_tol)
    if t >= horizon:
        raise DimensionMismatch(f"valuation time {t} at or past horizon {horizon}")
    if tilt is None:
        tilt = MortalityTilt.zero(horizon)
    deferred, survive = _mortality_factors(table, product.age, t, horizon, tilt)

    segregated = product.kind.startswith("segregated")
    term = product.kind.endswith("term")

    def leg(k: int) -> PriceResult:
        claim = product.claim(k)
        if segregated:
            return put_on_max(model, state, claim, mvn_tol)
        if claim.guarantee == 0.0:
            return forward_max(model, state, claim, mvn_tol)
        value = call_on_max(model, state, claim, mvn_tol)
        if raw_guarantee_leg:
            return replace(value, value=value.value + claim.guarantee)
        return value + zcb_price(model, state, k, mvn_tol).scaled(claim.guarantee)

    total = PriceResult(0.0, 0, 0.0, mvn_tol)
    if term:
        for k in range(t + 1, horizon + 1):
            total = total + leg(k).scaled(float(deferred[k - 1 - t]))
    else:
        total = leg(horizon).scaled(survive)
    return _finalize(total.value, total.path_count, total.truncation_bound,
                     mvn_tol)


@dataclass(frozen=True)
class DrawAverage:
    """Posterior-draw average of a conditional price."""

    mean: float
    dispersion: float
    n_draws: int


def bayesian_average(draws: Sequence[ValidatedModel],
                     pricer: Callable[[ValidatedModel], PriceResult | float]
                     ) -> DrawAverage:
    """Average a conditional-price operation over coefficient draws.

    The draws must be dimensionally interchangeable; the sample standard
    deviation across draws is reported as the dispersion.
    """
    if not draws:
        raise DimensionMismatch("need at least one parameter draw")
    shape = (draws[0].n, draws[0].n_z, draws[0].p, draws[0].n_regimes)
    values = []
    for m in draws:
        if (m.n, m.n_z, m.p, m.n_regimes) != shape:
            raise DimensionMismatch("parameter draws are not dimensionally consistent")
        out = pricer(m)
        values.append(out.value if isinstance(out, PriceResult) else float(out))
    arr = np.asarray(values)
    disp = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return DrawAverage(float(arr.mean()), disp, arr.size)
