"""Monte-Carlo oracle engine.

Simulates risk-neutral (or physical) ensembles in fixed-size canonical
chunks with counter-based per-chunk random streams, prices payoffs with
standard errors, and runs hedge-orthogonality checks.  Chunked evaluation
bounds memory at O(chunk x horizon x n); reductions combine chunk partials
in chunk order, so results are bitwise independent of the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .actuarial import LifeTable, MortalityTilt, survival, tilted_mortality
from .errors import DimensionMismatch, NonFinitePayoff
from .msvar import (
    CovarianceConstant,
    CovarianceVechGarch,
    MarketState,
    Mode,
    ValidatedModel,
    recursion_at_state,
)

CHUNK_SIZE = 8192
_LIFETIME_STREAM = 0x6C696665  # tag separating lifetime draws from market draws


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int


@dataclass(frozen=True)
class PathChunk:
    """Simulated paths for one canonical chunk.

    ``discounts[:, r]`` is D_{t+r} normalized to time 0 and
    ``prices[:, r]`` the asset price vector at step t + r (r = 0 is the
    valuation state, identical across paths).
    """

    start: int
    t: int
    regimes: np.ndarray  # (B, w)
    y: np.ndarray  # (B, w, n)
    discounts: np.ndarray  # (B, w + 1)
    prices: np.ndarray  # (B, w + 1, n_x)

    @property
    def size(self) -> int:
        return self.regimes.shape[0]

    def xbar(self, r: int) -> np.ndarray:
        """Discounted price vector at step t + r."""
        return self.discounts[:, r, None] * self.prices[:, r]


@dataclass(frozen=True)
class Ensemble:
    """Reproducible ensemble descriptor; paths stream through chunks()."""

    model: ValidatedModel
    state: MarketState
    horizon: int  # absolute end step u > t
    n_paths: int
    seed: int
    measure: Mode = "risk_neutral"
    antithetic: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.horizon <= self.state.t:
            raise DimensionMismatch("ensemble horizon must exceed valuation time")
        if self.horizon > self.model.horizon:
            raise DimensionMismatch("ensemble horizon exceeds the model horizon")
        if self.antithetic and self.n_paths % 2:
            raise DimensionMismatch("antithetic ensembles need an even path count")
        # With an unknown regime history the prefix is drawn per path from
        # its posterior; precompute the categorical table once.
        prefix = None
        if self.state.regimes is None and self.state.t > 0:
            from .measures import regime_posterior
            post = regime_posterior(self.model, self.state.y_hist,
                                    mode=self.measure)
            last = np.array([p.states[-1] for p in post.paths], dtype=np.int64)
            hists = None
            if isinstance(self.model.spec.covariance, CovarianceVechGarch):
                hists = []
                for p in post.paths:
                    rec = recursion_at_state(
                        self.model,
                        MarketState(self.state.t, self.state.y_hist, p.states))
                    hists.append(np.stack(rec.history[::-1]))
                hists = np.stack(hists)
            prefix = (np.cumsum(post.weights), last, hists)
        object.__setattr__(self, "_prefix", prefix)

    @property
    def n_chunks(self) -> int:
        return (self.n_paths + CHUNK_SIZE - 1) // CHUNK_SIZE

    def chunk_bounds(self, c: int) -> tuple[int, int]:
        return c * CHUNK_SIZE, min((c + 1) * CHUNK_SIZE, self.n_paths)

    def chunks(self) -> Iterator[PathChunk]:
        """Yield chunks in canonical order, simulating in parallel if asked."""
        if self.threads <= 1:
            for c in range(self.n_chunks):
                yield self._simulate_chunk(c)
            return
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            yield from pool.map(self._simulate_chunk, range(self.n_chunks))

    def _simulate_chunk(self, c: int) -> PathChunk:
        model, state = self.model, self.state
        lo, hi = self.chunk_bounds(c)
        size = hi - lo
        rng = np.random.Generator(np.random.Philox(key=self.seed,
                                                   counter=c << 64))
        t = state.t
        w = self.horizon - t
        n, n_z = model.n, model.n_z

        draw = size // 2 if self.antithetic else size
        prefix_idx = None
        if self._prefix is not None:
            cum_w = self._prefix[0]
            u_pre = rng.random(draw)
            prefix_idx = np.minimum(
                np.sum(u_pre[:, None] >= cum_w[None, :], axis=1), cum_w.size - 1)
        u_reg = rng.random((draw, w))
        z = rng.standard_normal((draw, w, n))
        if self.antithetic:
            u_reg = np.repeat(u_reg, 2, axis=0)
            z = np.stack([z, -z], axis=1).reshape(size, w, n)
            if prefix_idx is not None:
                prefix_idx = np.repeat(prefix_idx, 2)

        y = np.empty((size, w, n))
        regimes = np.empty((size, w), dtype=np.int64)
        discounts = np.empty((size, w + 1))
        prices = np.empty((size, w + 1, model.n_x))
        discounts[:, 0] = state.discount(model)
        prices[:, 0] = state.asset_prices(model)

        p_eff = model.effective_p(self.measure)
        lags = np.empty((p_eff, size, n))
        for i in range(p_eff):
            lags[i] = state.y_at(model, t - i)[None, :]

        cov = model.spec.covariance
        garch = isinstance(cov, CovarianceVechGarch)
        if garch:
            if prefix_idx is not None:
                g_hist = self._prefix[2][prefix_idx].copy()
            else:
                rec = recursion_at_state(model, state)
                hist0 = np.stack(rec.history[::-1])  # most recent first
                g_hist = np.broadcast_to(hist0, (size,) + hist0.shape).copy()

        s_prev = None
        if prefix_idx is not None:
            s_prev = self._prefix[1][prefix_idx]
        elif t > 0:
            s_prev = np.full(size, state.regimes[-1], dtype=np.int64)

        intercepts = (model.spec.intercepts if self.measure == "physical"
                      else model.rn_intercepts)
        exog = model.spec.exog
        tri = _unvech_index(n)

        for r in range(1, w + 1):
            m = t + r
            if s_prev is None:
                probs = np.broadcast_to(model.initial_dist,
                                        (size, model.n_regimes))
            else:
                probs = model.transition[s_prev]
            cum = np.cumsum(probs, axis=1)
            s = np.minimum(np.sum(u_reg[:, r - 1, None] >= cum, axis=1),
                           model.n_regimes - 1)
            regimes[:, r - 1] = s

            if garch:
                v = cov.b0[s].copy()
                for j in range(cov.p_star):
                    v += np.einsum("bkl,bl->bk", cov.lags[s, j], g_hist[:, j])
                sigma = v[:, tri]
                chol = np.linalg.cholesky(sigma)
                g_hist = np.concatenate([v[:, None], g_hist[:, :-1]], axis=1)
                diag = np.diagonal(sigma, axis1=1, axis2=2)
            else:
                sigma = cov.sigmas[s]
                chol = model.chol_sigmas[s]
                diag = np.diagonal(sigma, axis1=1, axis2=2)

            rate = lags[0][:, 0]
            discounts[:, r] = discounts[:, r - 1] * np.exp(-rate)

            mean = np.einsum("bij,j->bi", intercepts[s], exog[m - 1])
            for i in range(1, p_eff + 1):
                coeffs = (model.spec.lag_coeffs[s, i - 1]
                          if self.measure == "physical" else model.rn_lags[s, i - 1])
                mean += np.einsum("bij,bj->bi", coeffs, lags[i - 1])
            if self.measure == "risk_neutral":
                mean -= 0.5 * diag
            y_m = mean + np.einsum("bij,bj->bi", chol, z[:, r - 1])

            y[:, r - 1] = y_m
            prices[:, r] = np.exp(y_m[:, n_z:])
            lags = np.concatenate([y_m[None], lags[:-1]], axis=0)
            s_prev = s

        return PathChunk(lo, t, regimes, y, discounts, prices)


def _unvech_index(n: int) -> np.ndarray:
    """Index map turning batched vech vectors into (n, n) matrices."""
    idx = np.zeros((n, n), dtype=np.int64)
    pos = 0
    for j in range(n):
        for i in range(j, n):
            idx[i, j] = pos
            idx[j, i] = pos
            pos += 1
    return idx


def mc_collect(ensemble: Ensemble,
               per_chunk: Callable[[PathChunk], np.ndarray]) -> np.ndarray:
    """Evaluate a per-path statistic chunk by chunk, in canonical order."""
    parts = [np.asarray(per_chunk(chunk), dtype=float)
             for chunk in ensemble.chunks()]
    out = np.concatenate(parts, axis=0)
    if out.shape[0] != ensemble.n_paths:
        raise DimensionMismatch("per-chunk statistic changed the path count")
    return out


def mc_price(ensemble: Ensemble,
             payoff: Callable[[PathChunk], np.ndarray]) -> McEstimate:
    """Sample mean and standard error of a discounted payoff functional."""
    values = mc_collect(ensemble, payoff)
    if values.ndim != 1:
        raise DimensionMismatch("payoff functional must return one value per path")
    if not np.all(np.isfinite(values)):
        raise NonFinitePayoff("payoff evaluated to a non-finite value")
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(values.mean()), se, n)


def mc_hedge_residual(ensemble: Ensemble,
                      claim: Callable[[PathChunk], np.ndarray],
                      holdings: np.ndarray) -> list[McEstimate]:
    """Covariance of the one-step hedge cost increment with each price move.

    By the tower property the covariance of the cost increment with the
    price increment equals Cov(H - h'dX, dX_j), which needs no pathwise
    value process.  Returns one estimate per asset.
    """
    h = np.asarray(holdings, dtype=float).ravel()

    def stat(chunk: PathChunk) -> np.ndarray:
        dx = chunk.xbar(1) - chunk.xbar(0)
        resid = np.asarray(claim(chunk), dtype=float) - dx @ h
        return np.column_stack([resid, dx])

    data = mc_collect(ensemble, stat)
    if not np.all(np.isfinite(data)):
        raise NonFinitePayoff("hedge residual statistic is non-finite")
    resid = data[:, 0]
    dx = data[:, 1:]
    n = resid.size
    out = []
    rc = resid - resid.mean()
    for j in range(dx.shape[1]):
        dc = dx[:, j] - dx[:, j].mean()
        prod = rc * dc
        cov = float(prod.sum() / (n - 1))
        se = float(prod.std(ddof=1) / math.sqrt(n))
        out.append(McEstimate(cov, se, n))
    return out


def sample_lifetimes(table: LifeTable, x: int, t: int, horizon: int,
                     tilt: MortalityTilt, n_paths: int, seed: int) -> np.ndarray:
    """Death years under the tilted law, conditional on being alive at t.

    Returns an integer array: k in t+1..horizon marks death during year k,
    0 marks survival past the horizon.  Independent of the market stream.
    """
    tm = tilted_mortality(table, x, horizon, tilt)
    alive = 1.0 - (tm.cumulative[t - 1] if t > 0 else 0.0)
    probs = np.concatenate([tm.deferred_death[t:], [tm.survive_horizon]]) / alive
    outcomes = np.concatenate([np.arange(t + 1, horizon + 1), [0]])
    rng = np.random.Generator(np.random.Philox(key=seed ^ _LIFETIME_STREAM))
    u = rng.random(n_paths)
    idx = np.minimum(np.sum(u[:, None] >= np.cumsum(probs)[None, :], axis=1),
                     probs.size - 1)
    return outcomes[idx]


def claim_payoff(product_kind: str, guarantees: np.ndarray, weights: np.ndarray,
                 death_years: np.ndarray) -> Callable[[PathChunk], np.ndarray]:
    """Discounted insurance claim per path for the four product kinds.

    ``guarantees[k-1]`` and ``weights[k-1]`` describe the claim at step k;
    ``death_years`` come from sample_lifetimes (0 = survives the horizon).
    """
    segregated = product_kind.startswith("segregated")
    term = product_kind.endswith("term")

    def payoff(chunk: PathChunk) -> np.ndarray:
        dy = death_years[chunk.start:chunk.start + chunk.size]
        t = chunk.t
        horizon = t + chunk.discounts.shape[1] - 1
        out = np.zeros(chunk.size)
        if term:
            for k in range(t + 1, horizon + 1):
                hit = dy == k
                if not np.any(hit):
                    continue
                m_k = np.max(weights[k - 1] * chunk.prices[hit, k - t], axis=1)
                g = guarantees[k - 1]
                benefit = np.maximum(g - m_k, 0.0) if segregated \
                    else np.maximum(m_k, g)
                out[hit] = chunk.discounts[hit, k - t] * benefit
        else:
            alive = dy == 0
            m_t = np.max(weights[horizon - 1] * chunk.prices[alive, horizon - t],
                         axis=1)
            g = guarantees[horizon - 1]
            benefit = np.maximum(g - m_t, 0.0) if segregated \
                else np.maximum(m_t, g)
            out[alive] = chunk.discounts[alive, horizon - t] * benefit
        return out

    return payoff


def simulate_risk_neutral(model: ValidatedModel, state: MarketState,
                          horizon: int, n_paths: int, seed: int,
                          antithetic: bool = False, threads: int = 1) -> Ensemble:
    """Risk-neutral ensemble from the valuation state (martingale dynamics)."""
    return Ensemble(model, state, horizon, n_paths, seed,
                    measure="risk_neutral", antithetic=antithetic,
                    threads=threads)


def simulate_physical_ensemble(model: ValidatedModel, state: MarketState,
                               horizon: int, n_paths: int, seed: int,
                               threads: int = 1) -> Ensemble:
    """Physical-measure ensemble (used by the density-martingale checks)."""
    return Ensemble(model, state, horizon, n_paths, seed,
                    measure="physical", threads=threads)
