"""Locally risk-minimizing hedging.

Builds the one-step conditional second-moment matrix of discounted price
increments, the cross moments coupling discounted sum insureds with
next-period prices, the product-specific hedge loadings, and the hedge
(h, h0) itself.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .actuarial import LifeTable, MortalityTilt
from .errors import DimensionMismatch, NotPositiveDefinite, SingularOmega
from .measures import discounted_factor_expectation, shifted_law
from .msvar import MarketState, RegimePath, ValidatedModel, law_at_state, \
    recursion_at_state
from .pricing import (
    DEFAULT_MVN_TOL,
    ProductSpec,
    _event_probability,
    _iter_window_paths,
    _mortality_factors,
    condition_contexts,
    event_geometry,
    premium,
)
from .numerics import cholesky_lower


@dataclass(frozen=True)
class HedgePosition:
    """Holdings over (t, t+1]: h per asset, h0 in cash, with the value split
    they finance.  ``singular`` flags a pseudo-inverse fallback."""

    t: int
    h: np.ndarray
    h0: float
    value: float
    singular: bool = False


@dataclass(frozen=True)
class MomentBlock:
    omega: np.ndarray
    lam: np.ndarray


def _asset_sigma(model: ValidatedModel, sigma: np.ndarray, i: int, j: int) -> float:
    return float(sigma[model.n_z + i, model.n_z + j])


def cross_moment(model: ValidatedModel, state: MarketState, i: int, u: int,
                 j: int, v: int) -> float:
    """Conditional expectation of the product of discounted prices
    X_bar_{i,u} X_bar_{j,v}: the current product grows by the summed asset
    log-covariances up to the earlier horizon."""
    t = state.t
    if not (t <= u <= model.horizon and t <= v <= model.horizon):
        raise DimensionMismatch("cross-moment horizons outside the model window")
    end = min(u, v)
    total = 0.0
    for weight, ctx in condition_contexts(model, state):
        d_t = ctx.discount(model)
        xbar = d_t * ctx.asset_prices(model)
        base = xbar[i] * xbar[j]
        if end == t:
            total += weight * base
            continue
        _trunc, walk = _iter_window_paths(model, ctx, end)
        for _states, prob, sigmas in walk:
            expo = sum(_asset_sigma(model, sig, i, j) for sig in sigmas)
            total += weight * prob * base * math.exp(expo)
    return total


def omega(model: ValidatedModel, state: MarketState) -> np.ndarray:
    """One-step conditional second moment of discounted price increments."""
    t = state.t
    if t >= model.horizon:
        raise DimensionMismatch("omega needs one step of future horizon")
    n_x = model.n_x
    out = np.zeros((n_x, n_x))
    for weight, ctx in condition_contexts(model, state):
        d_t = ctx.discount(model)
        xbar = d_t * ctx.asset_prices(model)
        probs = (model.initial_dist if t == 0
                 else model.transition[ctx.regimes[-1]])
        rec = recursion_at_state(model, ctx)
        growth = np.zeros((n_x, n_x))
        for s in range(model.n_regimes):
            if probs[s] == 0.0:
                continue
            sigma = rec.copy().step(s)
            growth += probs[s] * np.exp(sigma[model.n_z:, model.n_z:])
        out += weight * np.outer(xbar, xbar) * (growth - 1.0)
    return 0.5 * (out + out.T)


def _r_vector(model: ValidatedModel, state: MarketState, claim, kind: str,
              mvn_tol: float) -> np.ndarray:
    """All components of the sum-insured cross expectation at one maturity.

    kind "segregated" uses the put decomposition of the guaranteed fund;
    "unit_linked" the call decomposition of max(M, G) including its
    constant guarantee leg.
    """
    t, k = state.t, claim.k
    n_x = model.n_x
    segregated = kind == "segregated"
    if segregated and claim.guarantee == 0.0:
        return np.zeros(n_x)
    event_kind = "put" if segregated else "call"
    if not segregated and claim.guarantee == 0.0:
        event_kind = "forward"
    out = np.zeros(n_x)
    for weight, ctx in condition_contexts(model, state):
        d_t = ctx.discount(model)
        x_t = ctx.asset_prices(model)
        xbar = d_t * x_t
        geoms = [event_geometry(claim, i, event_kind) for i in range(n_x)]
        _trunc, walk = _iter_window_paths(model, ctx, k)
        for _states, prob, sigmas in walk:
            path = RegimePath((t + 1, k), _states, prob)
            law = law_at_state(model, ctx, path, "risk_neutral", sigmas)
            for j in range(n_x):
                law_j = shifted_law(model, law, [(j, t + 1)])
                acc = 0.0
                pair_sum = 0.0
                for i, geom in enumerate(geoms):
                    pair = shifted_law(model, law, [(i, k), (j, t + 1)])
                    p_pair = _event_probability(model, pair, geom, k, mvn_tol)
                    pair_sum += claim.weights[i] * xbar[i] * xbar[j] * math.exp(
                        _asset_sigma(model, sigmas[0], i, j)) * p_pair
                if claim.guarantee > 0.0:
                    disc_j = discounted_factor_expectation(model, law_j, t, k)
                    bond = claim.guarantee * d_t * xbar[j] * disc_j.prefactor
                    p_bond = sum(
                        _event_probability(model, disc_j.law, geom, k, mvn_tol)
                        for geom in geoms)
                    if segregated:
                        acc = bond * p_bond - pair_sum
                    else:
                        acc = pair_sum - bond * (p_bond - 1.0)
                else:
                    acc = pair_sum
                out[j] += weight * prob * acc
    return out


def sum_insured_cross_expectation(model: ValidatedModel, state: MarketState,
                                  claim, j: int, kind: str,
                                  mvn_tol: float = DEFAULT_MVN_TOL) -> float:
    """Expectation of (discounted sum insured at k) x (discounted price of
    asset j at t+1); the hedge loading's raw material."""
    kind = {"segregated": "segregated", "unit_linked": "unit_linked"}[kind]
    return float(_r_vector(model, state, claim, kind, mvn_tol)[j])


def lambda_vector(product: ProductSpec, model: ValidatedModel,
                  state: MarketState, table: LifeTable,
                  tilt: MortalityTilt | None = None,
                  mvn_tol: float = DEFAULT_MVN_TOL) -> np.ndarray:
    """Hedge loading: mortality-weighted sum-insured cross expectations minus
    the discounted premium times the discounted price vector."""
    t, horizon = state.t, product.horizon
    n_x = model.n_x
    if not product.alive:
        return np.zeros(n_x)
    if tilt is None:
        tilt = MortalityTilt.zero(horizon)
    deferred, survive = _mortality_factors(table, product.age, t, horizon, tilt)
    kind = "segregated" if product.kind.startswith("segregated") else "unit_linked"

    lam = np.zeros(n_x)
    if product.kind.endswith("term"):
        for k in range(t + 1, horizon + 1):
            lam += deferred[k - 1 - t] * _r_vector(
                model, state, product.claim(k), kind, mvn_tol)
    else:
        lam = survive * _r_vector(model, state, product.claim(horizon), kind,
                                  mvn_tol)
    prem = premium(product, model, state, table, tilt, mvn_tol).value
    d_t = state.discount(model)
    xbar = d_t * state.asset_prices(model)
    return lam - d_t * prem * xbar


def strategy(omega_matrix: np.ndarray, lam: np.ndarray, value: float,
             prices: np.ndarray) -> HedgePosition:
    """Hedge h = Omega^{-1} Lambda with cash h0 = value - h . prices.

    A singular Omega (zero-variance configurations) falls back to the
    least-squares solution and flags the position instead of failing.
    """
    omega_matrix = np.asarray(omega_matrix, dtype=float)
    lam = np.asarray(lam, dtype=float).ravel()
    prices = np.asarray(prices, dtype=float).ravel()
    if omega_matrix.shape != (lam.size, lam.size) or prices.size != lam.size:
        raise DimensionMismatch("omega, lambda and prices sizes disagree")
    singular = False
    try:
        factor = cholesky_lower(omega_matrix)
        h = np.linalg.solve(factor.T, np.linalg.solve(factor, lam))
    except NotPositiveDefinite:
        h, *_ = np.linalg.lstsq(omega_matrix, lam, rcond=None)
        singular = True
        warnings.warn("omega is singular; least-squares hedge used",
                      SingularOmega, stacklevel=2)
    h0 = value - float(h @ prices)
    return HedgePosition(t=-1, h=h, h0=h0, value=value, singular=singular)


def hedge_for_product(product: ProductSpec, model: ValidatedModel,
                      state: MarketState, table: LifeTable,
                      tilt: MortalityTilt | None = None,
                      mvn_tol: float = DEFAULT_MVN_TOL,
                      discounted_ledger: bool = False) -> HedgePosition:
    """Full hedge at the valuation state: moments, loading, premium, split.

    With ``discounted_ledger`` the value and cash account are kept in
    time-0 dollars (both legs scale by D_t; the identity is unchanged).
    """
    om = omega(model, state)
    lam = lambda_vector(product, model, state, table, tilt, mvn_tol)
    prem = premium(product, model, state, table, tilt, mvn_tol).value
    prices = state.asset_prices(model)
    if discounted_ledger:
        d_t = state.discount(model)
        pos = strategy(om, lam, d_t * prem, d_t * prices)
    else:
        pos = strategy(om, lam, prem, prices)
    return HedgePosition(t=state.t, h=pos.h, h0=pos.h0, value=pos.value,
                         singular=pos.singular)
