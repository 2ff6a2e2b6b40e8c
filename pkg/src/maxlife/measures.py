"""Probability-measure machinery on top of the stacked Gaussian laws.

Covers the market state-price density, the measure-change kernel, forward
and pair measure shifts (re-weighting by one or two discounted asset
prices), discounted-factor expectations, affine projections of stacked
laws, and posterior weighting of regime histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, PathExplosion, SelectorOutOfWindow
from .msvar import (
    GarchRecursion,
    GaussianLaw,
    MarketState,
    Mode,
    RegimePath,
    ValidatedModel,
    build_stacked_system,
    cholesky_lower,
    conditional_law,
    initial_state,
)

# Regime paths whose chain probability falls below this are pruned from
# enumerations; the pruned mass is reported as a truncation bound.
PRUNE_THRESHOLD = 1e-15

# Enumeration guard: N^t path counts beyond this raise PathExplosion.
MAX_ENUMERATED_PATHS = 1_000_000


def girsanov_kernel(model: ValidatedModel, regime: int, psi: np.ndarray,
                    y_lags: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Per-step mean shift that makes discounted prices martingales.

    ``y_lags`` holds the max(p, 1) most recent observations, most recent
    first.  Economic rows carry only the convexity correction; asset rows
    add the discounted-price drift recentering.
    """
    n, n_z, p = model.n, model.n_z, model.p
    y_lags = np.asarray(y_lags, dtype=float)
    if y_lags.ndim != 2 or y_lags.shape[0] < max(p, 1) or y_lags.shape[1] != n:
        raise DimensionMismatch(
            f"y_lags must supply max(p,1)={max(p, 1)} rows of dim {n}")
    fitted = model.spec.intercepts[regime] @ np.atleast_1d(psi)
    for i in range(1, p + 1):
        fitted = fitted + model.spec.lag_coeffs[regime, i - 1] @ y_lags[i - 1]
    y_prev = y_lags[0]
    theta_bar = np.zeros(n)
    theta_bar[n_z:] = (y_prev[n_z:] - fitted[n_z:]) + y_prev[0]
    return theta_bar - 0.5 * np.diag(sigma)


def state_price_density(model: ValidatedModel, y_path: np.ndarray,
                        regime_path: np.ndarray) -> np.ndarray:
    """Market state-price density L_1..L_T along physical paths.

    Accepts a single path (T, n) with regimes (T,) or a batch (B, T, n)
    with regimes (B, T); returns (T,) or (B, T).  Strictly positive.
    """
    y = np.asarray(y_path, dtype=float)
    s = np.asarray(regime_path)
    single = y.ndim == 2
    if single:
        y = y[None]
        s = s[None]
    batch, horizon, n = y.shape
    if s.shape != (batch, horizon):
        raise DimensionMismatch("regime path shape does not match y path")

    log_l = np.zeros((batch, horizon))
    exog = model.spec.exog
    recs = None
    if model.chol_sigmas is None:
        recs = [GarchRecursion.start(model) for _ in range(batch)]

    y_prev_lag = np.empty((max(model.p, 1), batch, n))
    for i in range(max(model.p, 1)):
        y_prev_lag[i] = model.presample(-i)[None, :]

    increment = np.zeros(batch)
    for m in range(1, horizon + 1):
        sm = s[:, m - 1]
        if recs is None:
            sigmas = model.spec.covariance.sigmas[sm]
        else:
            sigmas = np.stack([recs[b].step(int(sm[b])) for b in range(batch)])
        fitted = np.einsum("bij,j->bi", model.spec.intercepts[sm], exog[m - 1])
        for i in range(1, model.p + 1):
            fitted += np.einsum("bij,bj->bi",
                                model.spec.lag_coeffs[sm, i - 1], y_prev_lag[i - 1])
        y_prev = y_prev_lag[0]
        theta = np.zeros((batch, n))
        theta[:, model.n_z:] = (y_prev[:, model.n_z:] - fitted[:, model.n_z:]
                                + y_prev[:, [0]])
        theta -= 0.5 * np.diagonal(sigmas, axis1=1, axis2=2)
        resid = y[:, m - 1] - fitted
        solved = np.linalg.solve(sigmas, theta[..., None])[..., 0]
        increment = np.einsum("bi,bi->b", solved, resid) \
            - 0.5 * np.einsum("bi,bi->b", solved, theta)
        log_l[:, m - 1] = (log_l[:, m - 2] if m > 1 else 0.0) + increment
        # shift the lag stack
        for i in range(max(model.p, 1) - 1, 0, -1):
            y_prev_lag[i] = y_prev_lag[i - 1]
        y_prev_lag[0] = y[:, m - 1]
    out = np.exp(log_l)
    return out[0] if single else out


def beta_selector(model: ValidatedModel, law: GaussianLaw, asset: int,
                  u: int) -> np.ndarray:
    """Selector summing log price of ``asset`` over steps t+1..u (zero if u=t)."""
    t, end = law.window
    if not (t <= u <= end):
        raise SelectorOutOfWindow(f"forward time {u} outside window ({t}, {end}]")
    if not 0 <= asset < model.n_x:
        raise DimensionMismatch(f"asset index {asset} out of range")
    n = law.block_dim
    beta = np.zeros(law.width * n)
    for j in range(t + 1, u + 1):
        beta[(j - t - 1) * n + model.n_z + asset] = 1.0
    return beta


def gamma_selector(law: GaussianLaw, u: int, v: int) -> tuple[bool, np.ndarray]:
    """Discount selector for exp(-(r_{u+1} + ... + r_v)).

    Returns (uses_known_rate, gamma): the boolean marks the deterministic
    e1' y_t factor present when u = t < v; random rates are collected by
    gamma over in-window blocks.
    """
    t, end = law.window
    if not (t <= u <= v <= end):
        raise SelectorOutOfWindow(f"discount window ({u}, {v}] outside ({t}, {end}]")
    n = law.block_dim
    gamma = np.zeros(law.width * n)
    for j in range(max(u, t + 1), v):
        gamma[(j - t - 1) * n] = 1.0
    return (u == t and v > u), gamma


def shifted_law(model: ValidatedModel, base: GaussianLaw,
                shifts: list[tuple[int, int]]) -> GaussianLaw:
    """Forward (one shift) or pair (two shifts) measure change.

    Each shift (asset i, horizon u) re-weights by the discounted price of
    asset i at u; the law's mean moves by shift_kernel @ beta and the
    covariance is unchanged.
    """
    if base.shift_kernel is None:
        raise DimensionMismatch("law does not carry a shift kernel")
    total = np.zeros(base.mean.shape)
    tags = []
    for asset, u in shifts:
        total += beta_selector(model, base, asset, u)
        tags.append(f"fwd({asset},{u})")
    measure = base.measure + "|" + "+".join(tags) if tags else base.measure
    return replace(base, mean=base.mean + base.shift_kernel @ total,
                   measure=measure)


@dataclass(frozen=True)
class DiscountedExpectation:
    """Scalar prefactor exp(a) and the discount-shifted law from Lemma-style
    completion of squares: E^G[(D_v/D_u) 1_A] = prefactor * N(A; shifted law)."""

    log_prefactor: float
    law: GaussianLaw
    description: str = ""

    @property
    def prefactor(self) -> float:
        return math.exp(self.log_prefactor)


def discounted_factor_expectation(model: ValidatedModel, law: GaussianLaw,
                                  u: int, v: int,
                                  description: str = "") -> DiscountedExpectation:
    """Expectation of the discount ratio D_v/D_u against the law's measure.

    The prefactor absorbs the known spot rate (when u = t) and the Gaussian
    completion of squares; the returned law has its mean shifted by
    -cov @ gamma.  Full-space events then price as prefactor * 1.
    """
    uses_known, gamma = gamma_selector(law, u, v)
    known = float(law.y_t[0]) if uses_known else 0.0
    cov_gamma = law.cov @ gamma
    log_a = -known - float(gamma @ law.mean) + 0.5 * float(gamma @ cov_gamma)
    shifted = replace(law, mean=law.mean - cov_gamma,
                      measure=law.measure + f"|disc({u},{v}]")
    return DiscountedExpectation(log_a, shifted, description)


def project_law(model: ValidatedModel, law: GaussianLaw, matrix: np.ndarray,
                k: int) -> GaussianLaw:
    """Affine image A @ xtilde_k of the stacked law (Lemma-style projection)."""
    t, end = law.window
    if not (t < k <= end):
        raise DimensionMismatch(f"block {k} outside window ({t}, {end}]")
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != model.n_x:
        raise DimensionMismatch(
            f"projection matrix must have {model.n_x} columns, got {matrix.shape}")
    n = law.block_dim
    rows = slice((k - t - 1) * n + model.n_z, (k - t) * n)
    mean = matrix @ law.mean[rows]
    cov = matrix @ law.cov[rows, rows] @ matrix.T
    return GaussianLaw(law.measure + f"|proj(k={k})", (k - 1, k),
                       matrix.shape[0], mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class PosteriorWeights:
    """Normalized weights over regime histories given observed data."""

    paths: tuple[RegimePath, ...]
    weights: np.ndarray
    truncation_bound: float = 0.0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.paths),):
            raise DimensionMismatch("one weight per path required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DimensionMismatch("weights must be a probability vector")
        object.__setattr__(self, "weights", w)


def enumerate_regime_paths(model: ValidatedModel, prev: int | None,
                           start_time: int, depth: int):
    """Depth-first enumeration of regime paths with chain probabilities.

    Yields (states, chain_prob, recursion) triples where ``recursion`` is a
    GarchRecursion advanced through the path (shared prefixes advance it
    once per node).  Paths with chain probability below PRUNE_THRESHOLD are
    pruned; the generator's ``truncated`` attribute accumulates the bound.
    """
    if model.n_regimes ** depth > MAX_ENUMERATED_PATHS:
        raise PathExplosion(
            f"{model.n_regimes}^{depth} regime paths exceed the enumeration guard")

    class _Walker:
        truncated = 0.0

        def walk(self, states, prob, prev_regime, rec):
            if len(states) == depth:
                yield tuple(states), prob, rec
                return
            probs = (model.initial_dist if prev_regime is None
                     else model.transition[prev_regime])
            for s in range(model.n_regimes):
                q = prob * float(probs[s])
                if q == 0.0:
                    continue
                if q < PRUNE_THRESHOLD:
                    self.truncated += q
                    continue
                child = rec.copy()
                child.step(s)
                yield from self.walk(states + [s], q, s, child)

    walker = _Walker()
    start_rec = GarchRecursion.start(model)
    gen = walker.walk([], 1.0, prev, start_rec)
    return walker, gen


def _walk_from(model: ValidatedModel, prev: int | None, rec: GarchRecursion,
               depth: int):
    """Enumeration continuing from an advanced recursion (pricing windows)."""
    if model.n_regimes ** depth > MAX_ENUMERATED_PATHS:
        raise PathExplosion(
            f"{model.n_regimes}^{depth} regime paths exceed the enumeration guard")

    truncated = [0.0]

    def walk(states, prob, prev_regime, cur, sigmas):
        if len(states) == depth:
            yield tuple(states), prob, list(sigmas)
            return
        probs = (model.initial_dist if prev_regime is None
                 else model.transition[prev_regime])
        for s in range(model.n_regimes):
            q = prob * float(probs[s])
            if q == 0.0:
                continue
            if q < PRUNE_THRESHOLD:
                truncated[0] += q
                continue
            child = cur.copy()
            sig = child.step(s)
            yield from walk(states + [s], q, s, child, sigmas + [sig])

    return truncated, walk([], 1.0, prev, rec, [])


def regime_posterior(model: ValidatedModel, y_obs: np.ndarray,
                     mode: Mode = "risk_neutral") -> PosteriorWeights:
    """Posterior over regime histories s_1..s_t given observations y_1..y_t.

    Point-mass coefficients: the weight of a path is its chain probability
    times the stacked Gaussian density of the observations, evaluated
    through the unit-block-triangular system (determinant one, block
    quadratic forms).  Normalized by log-sum-exp.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    t = y_obs.shape[0]
    if t == 0:
        return PosteriorWeights((RegimePath((1, 0), (), 1.0),), np.array([1.0]))
    if y_obs.shape != (t, model.n):
        raise DimensionMismatch("y_obs must have shape (t, n)")

    state0 = initial_state(model)
    walker, gen = enumerate_regime_paths(model, None, 1, t)
    paths: list[RegimePath] = []
    logs: list[float] = []
    for states, prob, _rec in gen:
        path = RegimePath((1, t), states, prob)
        sys = build_stacked_system(model, path, state0, mode)
        law = conditional_law(sys, state0.y_hist)
        resid = y_obs.ravel() - law.mean
        white = sys.psi22.apply(resid)
        quad = 0.0
        logdet = 0.0
        for r, chol in enumerate(sys.chols):
            block = white[r * model.n:(r + 1) * model.n]
            sol = solve_triangular(chol, block, lower=True)
            quad += float(sol @ sol)
            logdet += 2.0 * float(np.log(np.diag(chol)).sum())
        loglik = -0.5 * (quad + logdet + t * model.n * math.log(2.0 * math.pi))
        paths.append(path)
        logs.append(math.log(prob) + loglik)

    logs_arr = np.array(logs)
    logs_arr -= logs_arr.max()
    w = np.exp(logs_arr)
    w /= w.sum()
    return PosteriorWeights(tuple(paths), w, walker.truncated)
