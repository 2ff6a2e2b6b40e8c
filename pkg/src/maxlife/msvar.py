"""Regime-switching VAR market model.

Implements the model specification and validation, the regime-dependent
covariance sequence (constant-per-regime or vech-GARCH), the stacked
Gaussian system over a future window together with its conditional law
under the physical or the risk-neutral measure, and physical-measure
simulation.

Conventions
-----------
* Time is 1-based in the math; ``y_hist[i]`` holds the observation at time
  ``i + 1`` and ``presample_y[j]`` the value at time ``-j`` (index 0 is the
  time-0 value).
* Regime indices are 0-based.
* The first coordinate of ``y`` is the log spot rate for the next period:
  the rate paid over (t-1, t] is ``y[0]`` observed at t-1.  The last ``n_x``
  coordinates are log asset prices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidTransitionMatrix,
    NotPositiveDefinite,
)
from .numerics import (
    BlockLowerSystem,
    cholesky_lower,
    ensure_symmetric,
    unvech,
    vech,
    vech_dim,
)

Mode = Literal["physical", "risk_neutral"]


@dataclass(frozen=True)
class CovarianceConstant:
    """One covariance matrix per regime."""

    sigmas: np.ndarray  # (N, n, n)


@dataclass(frozen=True)
class CovarianceVechGarch:
    """vech recursion vech(S_t) = b0(s_t) + sum_j b[j](s_t) vech(S_{t-j}).

    ``presample`` holds the matrices at times 0, -1, ..., 1 - p_star
    (most recent first).
    """

    b0: np.ndarray  # (N, mdim)
    lags: np.ndarray  # (N, p_star, mdim, mdim)
    presample: np.ndarray  # (p_star, n, n)

    @property
    def p_star(self) -> int:
        return self.lags.shape[1]


CovarianceModel = Union[CovarianceConstant, CovarianceVechGarch]


@dataclass(frozen=True)
class ModelSpec:
    """Raw market-model description prior to validation.

    ``intercepts`` stacks the per-regime exogenous coefficient matrices
    (N, n, k); ``lag_coeffs`` the per-regime lag matrices (N, p, n, n).
    ``presample_y`` must supply max(p, 1) rows: the time-0 value is always
    required because it carries the first period's log spot rate.
    """

    n_z: int
    n_x: int
    p: int
    intercepts: np.ndarray
    lag_coeffs: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray
    covariance: CovarianceModel
    presample_y: np.ndarray
    exog: np.ndarray  # (T, k)

    @property
    def n(self) -> int:
        return self.n_z + self.n_x

    @property
    def n_regimes(self) -> int:
        return self.transition.shape[0]

    @property
    def horizon(self) -> int:
        return self.exog.shape[0]


@dataclass(frozen=True)
class ValidatedModel:
    """Immutable, validated model with precomputed risk-neutral adjustments.

    ``rn_intercepts`` and ``rn_lags`` hold A + Delta for the martingale
    measure change: asset rows are replaced by the discounted-price
    martingale dynamics while economic rows keep their physical
    coefficients.  ``rn_lags`` has max(p, 1) lag slots because the price
    recursion always references the previous log price and spot rate.
    """

    spec: ModelSpec
    rn_intercepts: np.ndarray  # (N, n, k)
    rn_lags: np.ndarray  # (N, p_eff, n, n)
    chol_sigmas: np.ndarray | None  # per-regime factors for constant cov

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def n_z(self) -> int:
        return self.spec.n_z

    @property
    def n_x(self) -> int:
        return self.spec.n_x

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def n_regimes(self) -> int:
        return self.spec.n_regimes

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def transition(self) -> np.ndarray:
        return self.spec.transition

    @property
    def initial_dist(self) -> np.ndarray:
        return self.spec.initial_dist

    def lag_matrix(self, regime: int, lag: int, mode: Mode) -> np.ndarray:
        """A_lag + Delta_lag at ``regime`` (zero matrix outside the band)."""
        if mode == "physical":
            if 1 <= lag <= self.p:
                return self.spec.lag_coeffs[regime, lag - 1]
            return np.zeros((self.n, self.n))
        if 1 <= lag <= self.rn_lags.shape[1]:
            return self.rn_lags[regime, lag - 1]
        return np.zeros((self.n, self.n))

    def intercept_matrix(self, regime: int, mode: Mode) -> np.ndarray:
        if mode == "physical":
            return self.spec.intercepts[regime]
        return self.rn_intercepts[regime]

    def effective_p(self, mode: Mode) -> int:
        return self.p if mode == "physical" else self.rn_lags.shape[1]

    def presample(self, time: int) -> np.ndarray:
        """y value at non-positive ``time`` from the presample block."""
        idx = -time
        if not 0 <= idx < self.spec.presample_y.shape[0]:
            raise DimensionMismatch(f"presample does not cover time {time}")
        return self.spec.presample_y[idx]


def validate_spec(raw: ModelSpec) -> ValidatedModel:
    """Check every model invariant and precompute measure-change matrices."""
    n, n_z, n_x, p = raw.n, raw.n_z, raw.n_x, raw.p
    if n_z < 1 or n_x < 1:
        raise DimensionMismatch("need n_z >= 1 and n_x >= 1")
    big_n = raw.transition.shape[0]
    if raw.transition.shape != (big_n, big_n):
        raise InvalidTransitionMatrix(
            f"transition matrix must be square, got {raw.transition.shape}")
    if np.any(raw.transition < 0):
        raise InvalidTransitionMatrix("transition entries must be nonnegative")
    row_sums = raw.transition.sum(axis=1)
    bad = np.where(np.abs(row_sums - 1.0) > 1e-12)[0]
    if bad.size:
        raise InvalidTransitionMatrix(
            f"transition row {bad[0]} sums to {row_sums[bad[0]]!r}, expected 1")
    if raw.initial_dist.shape != (big_n,) or np.any(raw.initial_dist < 0) \
            or abs(raw.initial_dist.sum() - 1.0) > 1e-12:
        raise InvalidTransitionMatrix("initial_dist must be a distribution over regimes")

    k = raw.intercepts.shape[2] if raw.intercepts.ndim == 3 else 0
    if raw.intercepts.shape != (big_n, n, k):
        raise DimensionMismatch(
            f"intercepts must have shape (N, n, k), got {raw.intercepts.shape}")
    if raw.lag_coeffs.shape != (big_n, p, n, n):
        raise DimensionMismatch(
            f"lag coefficients must have shape (N, p, n, n), got {raw.lag_coeffs.shape}")
    if raw.exog.ndim != 2 or raw.exog.shape[1] != k:
        raise DimensionMismatch("exog must have shape (T, k)")
    need = max(p, 1)
    if raw.presample_y.shape != (need, n):
        raise DimensionMismatch(
            f"presample_y must have shape ({need}, {n}), got {raw.presample_y.shape}")

    chol_sigmas = None
    cov = raw.covariance
    if isinstance(cov, CovarianceConstant):
        if cov.sigmas.shape != (big_n, n, n):
            raise DimensionMismatch(
                f"constant covariances must have shape (N, n, n), got {cov.sigmas.shape}")
        chol_sigmas = np.stack([cholesky_lower(s) for s in cov.sigmas])
    elif isinstance(cov, CovarianceVechGarch):
        mdim = vech_dim(n)
        if cov.b0.shape != (big_n, mdim):
            raise DimensionMismatch("vech-GARCH b0 has the wrong shape")
        if cov.lags.ndim != 4 or cov.lags.shape[0] != big_n \
                or cov.lags.shape[2:] != (mdim, mdim):
            raise DimensionMismatch("vech-GARCH lag matrices have the wrong shape")
        if cov.presample.shape != (cov.p_star, n, n):
            raise DimensionMismatch("vech-GARCH presample has the wrong shape")
        for s in cov.presample:
            cholesky_lower(s)
    else:
        raise DimensionMismatch(f"unknown covariance model {type(cov).__name__}")

    rn_intercepts, rn_lags = _risk_neutral_coefficients(raw)
    return ValidatedModel(spec=raw, rn_intercepts=rn_intercepts,
                          rn_lags=rn_lags, chol_sigmas=chol_sigmas)


def _risk_neutral_coefficients(raw: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """A + Delta per regime under the martingale measure change.

    Asset rows: intercept cancels, the lag-1 block becomes the identity on
    log prices plus the spot-rate pickup, and higher lags cancel.  Economic
    rows are untouched (their kernel is the pure convexity shift, handled
    through the alpha vector, not the coefficients).
    """
    n, n_z, n_x, p = raw.n, raw.n_z, raw.n_x, raw.p
    big_n = raw.n_regimes
    p_eff = max(p, 1)
    asset = slice(n_z, n)

    rn_intercepts = raw.intercepts.copy()
    rn_intercepts[:, asset, :] = 0.0

    rn_lags = np.zeros((big_n, p_eff, n, n))
    rn_lags[:, :p] = raw.lag_coeffs
    # M2 + i_{n_x} e1^T on the asset rows of lag 1
    lag1_asset = np.zeros((n_x, n))
    lag1_asset[:, asset] = np.eye(n_x)
    lag1_asset[:, 0] += 1.0
    for s in range(big_n):
        rn_lags[s, 0, asset, :] = lag1_asset
        for j in range(1, p):
            rn_lags[s, j, asset, :] = 0.0
    return rn_intercepts, rn_lags


@dataclass(frozen=True)
class RegimePath:
    """Regime indices over a closed step window with their chain probability."""

    window: tuple[int, int]  # (t0, t1), states cover t0..t1
    states: tuple[int, ...]
    chain_prob: float

    def __post_init__(self) -> None:
        t0, t1 = self.window
        if len(self.states) != t1 - t0 + 1:
            raise DimensionMismatch(
                f"path of length {len(self.states)} cannot cover [{t0}, {t1}]")
        if not 0.0 < self.chain_prob <= 1.0:
            raise DimensionMismatch(f"chain_prob {self.chain_prob} outside (0, 1]")


def chain_probability(model: ValidatedModel, states: tuple[int, ...],
                      prev: int | None) -> float:
    """Probability of a regime sequence given the state before it.

    ``prev is None`` means the sequence starts at time 1 and the first factor
    comes from the initial distribution.
    """
    prob = 1.0
    for s in states:
        prob *= model.initial_dist[s] if prev is None else model.transition[prev, s]
        prev = s
    return float(prob)


@dataclass(frozen=True)
class MarketState:
    """Observed market information at valuation time t.

    ``regimes`` is the realized regime sequence s_1..s_t when conditioning
    on it; ``None`` requests posterior averaging over regime histories.
    """

    t: int
    y_hist: np.ndarray  # (t, n)
    regimes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "y_hist",
                           np.asarray(self.y_hist, dtype=float).reshape(self.t, -1))
        if self.regimes is not None and len(self.regimes) != self.t:
            raise DimensionMismatch("regime prefix must have length t")

    def y_at(self, model: ValidatedModel, time: int) -> np.ndarray:
        """y value at any time <= t (observed or presample)."""
        if time > self.t:
            raise DimensionMismatch(f"time {time} not observed at t={self.t}")
        if time >= 1:
            return self.y_hist[time - 1]
        return model.presample(time)

    def current_y(self, model: ValidatedModel) -> np.ndarray:
        return self.y_at(model, self.t)

    def discount(self, model: ValidatedModel) -> float:
        """D_t = exp(-(r_1 + ... + r_t)) with r_m = e1' y_{m-1}."""
        rates = [self.y_at(model, m - 1)[0] for m in range(1, self.t + 1)]
        return float(np.exp(-np.sum(rates))) if rates else 1.0

    def asset_prices(self, model: ValidatedModel) -> np.ndarray:
        return np.exp(self.current_y(model)[model.n_z:])


def initial_state(model: ValidatedModel) -> MarketState:
    return MarketState(t=0, y_hist=np.zeros((0, model.n)), regimes=())


def covariance_sequence(model: ValidatedModel, path: RegimePath) -> list[np.ndarray]:
    """Covariance matrices along a regime path.

    For the vech-GARCH model the recursion starts from the model presample,
    so the path must begin at time 1.  Raises NotPositiveDefinite when a
    reconstructed matrix fails factorization (inadmissible coefficients).
    """
    cov = model.spec.covariance
    if isinstance(cov, CovarianceConstant):
        return [cov.sigmas[s] for s in path.states]
    if path.window[0] != 1:
        raise DimensionMismatch(
            "vech-GARCH covariance paths must start at time 1 "
            "(include the regime prefix)")
    out: list[np.ndarray] = []
    rec = GarchRecursion.start(model)
    for s in path.states:
        out.append(rec.step(s))
    return out


class GarchRecursion:
    """Incremental vech-GARCH state: supports prefix sharing via copy()."""

    __slots__ = ("model", "history")

    def __init__(self, model: ValidatedModel, history: list[np.ndarray]):
        self.model = model
        self.history = history  # vech values, most recent last

    @classmethod
    def start(cls, model: ValidatedModel) -> "GarchRecursion":
        cov = model.spec.covariance
        if isinstance(cov, CovarianceConstant):
            return cls(model, [])
        hist = [vech(sig) for sig in cov.presample[::-1]]  # chronological
        return cls(model, hist)

    def copy(self) -> "GarchRecursion":
        return GarchRecursion(self.model, list(self.history))

    def step(self, regime: int) -> np.ndarray:
        """Advance one step at ``regime`` and return the new covariance."""
        cov = self.model.spec.covariance
        if isinstance(cov, CovarianceConstant):
            return cov.sigmas[regime]
        v = cov.b0[regime].copy()
        for j in range(cov.p_star):
            v += cov.lags[regime, j] @ self.history[-1 - j]
        sigma = unvech(v)
        try:
            cholesky_lower(sigma)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(
                f"vech-GARCH produced a non-PD covariance at regime {regime}: {exc}"
            ) from exc
        self.history.append(v)
        if len(self.history) > cov.p_star:
            del self.history[0]
        return sigma


def recursion_at_state(model: ValidatedModel, state: MarketState) -> GarchRecursion:
    """GARCH recursion advanced through the regime prefix of ``state``."""
    rec = GarchRecursion.start(model)
    if isinstance(model.spec.covariance, CovarianceVechGarch) and state.t > 0:
        if state.regimes is None:
            raise DimensionMismatch(
                "vech-GARCH conditioning requires the regime prefix")
        for s in state.regimes:
            rec.step(s)
    return rec


@dataclass(frozen=True)
class StackedSystem:
    """Stacked linear system for the future block over window (t, u].

    Row r (1-based) corresponds to time t + r.  ``delta2`` carries the
    exogenous terms plus lag terms that reach into the presample; couplings
    to observed values y_1..y_t live in ``psi21`` so the conditional-law
    formula mean = Psi22^{-1} (delta2 - alpha - Psi21 ybar_t) applies
    literally.
    """

    window: tuple[int, int]
    mode: Mode
    psi22: BlockLowerSystem
    psi21: dict[tuple[int, int], np.ndarray]  # (row r, observed time j) -> block
    delta2: np.ndarray  # (w*n,)
    sigmas: tuple[np.ndarray, ...]
    chols: tuple[np.ndarray, ...]
    alpha: np.ndarray  # (w*n,)
    y_t: np.ndarray  # last observed y (time t)

    @property
    def width(self) -> int:
        return self.window[1] - self.window[0]

    @property
    def block_dim(self) -> int:
        return self.psi22.block_dim

    def psi21_apply(self, y_hist: np.ndarray) -> np.ndarray:
        """Psi21 @ ybar_t for the observed history rows (time j at row j-1)."""
        n = self.block_dim
        out = np.zeros(self.width * n)
        for (r, j), blk in self.psi21.items():
            out[(r - 1) * n:r * n] += blk @ y_hist[j - 1]
        return out

    def sigma_bar(self) -> np.ndarray:
        """Dense block-diagonal stacked covariance."""
        n = self.block_dim
        out = np.zeros((self.width * n, self.width * n))
        for r, sig in enumerate(self.sigmas):
            out[r * n:(r + 1) * n, r * n:(r + 1) * n] = sig
        return out


def build_stacked_system(model: ValidatedModel, path: RegimePath,
                         state: MarketState, mode: Mode,
                         sigmas: list[np.ndarray] | None = None) -> StackedSystem:
    """Assemble the window system for ``path`` over (state.t, u].

    ``sigmas`` may be supplied by enumeration code that already ran the
    covariance recursion; otherwise they are derived here (through the
    regime prefix of ``state`` for the vech-GARCH model).
    """
    t = state.t
    t0, u = path.window
    if t0 != t + 1:
        raise DimensionMismatch(f"path window {path.window} must start at t+1={t + 1}")
    w = u - t
    n = model.n
    p_eff = model.effective_p(mode)

    if sigmas is None:
        rec = recursion_at_state(model, state)
        sigmas = [rec.step(s) for s in path.states]
    if len(sigmas) != w:
        raise DimensionMismatch("covariance sequence does not cover the window")

    sub_blocks: dict[tuple[int, int], np.ndarray] = {}
    psi21: dict[tuple[int, int], np.ndarray] = {}
    delta2 = np.zeros(w * n)
    exog = model.spec.exog
    if u > exog.shape[0]:
        raise DimensionMismatch(
            f"window end {u} exceeds the exogenous horizon {exog.shape[0]}")

    for r in range(1, w + 1):
        m = t + r
        s_m = path.states[r - 1]
        row = slice((r - 1) * n, r * n)
        delta2[row] = model.intercept_matrix(s_m, mode) @ exog[m - 1]
        for i in range(1, p_eff + 1):
            j = m - i
            coeff = model.lag_matrix(s_m, i, mode)
            if j > t:
                sub_blocks[(r, i)] = -coeff
            elif j >= 1:
                psi21[(r, j)] = psi21.get((r, j), 0.0) + (-coeff)
            else:
                delta2[row] += coeff @ model.presample(j)

    chols = tuple(cholesky_lower(s) for s in sigmas)
    if mode == "risk_neutral":
        alpha = np.concatenate([0.5 * np.diag(s) for s in sigmas])
    else:
        alpha = np.zeros(w * n)
    return StackedSystem(
        window=(t, u), mode=mode,
        psi22=BlockLowerSystem(w, n, sub_blocks),
        psi21=psi21, delta2=delta2,
        sigmas=tuple(sigmas), chols=chols, alpha=alpha,
        y_t=state.current_y(model),
    )


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian law of the stacked future block under a named measure.

    ``shift_kernel`` is Psi22^{-1} SigmaBar22: forward/pair measure changes
    shift the mean by ``shift_kernel @ beta`` with the covariance unchanged.
    ``y_t`` anchors discount selectors that need the known spot rate.
    """

    measure: str
    window: tuple[int, int]
    block_dim: int
    mean: np.ndarray
    cov: np.ndarray
    shift_kernel: np.ndarray | None = None
    y_t: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.window[1] - self.window[0]

    def block_mean(self, time: int) -> np.ndarray:
        r = time - self.window[0] - 1
        n = self.block_dim
        return self.mean[r * n:(r + 1) * n]


def conditional_law(sys: StackedSystem, y_hist: np.ndarray) -> GaussianLaw:
    """Law of the future block given observed history, via block solves.

    mean = Psi22^{-1}(delta2 - alpha - Psi21 ybar_t) and
    cov = Psi22^{-1} SigmaBar22 Psi22^{-T}; no explicit inverse is formed.
    """
    if sys.width == 0:
        empty = np.zeros(0)
        return GaussianLaw(sys.mode, sys.window, sys.block_dim, empty,
                           np.zeros((0, 0)), np.zeros((0, 0)), sys.y_t)
    rhs = sys.delta2 - sys.alpha - sys.psi21_apply(np.asarray(y_hist, dtype=float))
    mean = sys.psi22.solve(rhs)
    kernel = sys.psi22.solve(sys.sigma_bar())
    cov = sys.psi22.solve(kernel.T).T
    cov = 0.5 * (cov + cov.T)
    measure = "risk_neutral" if sys.mode == "risk_neutral" else "physical"
    return GaussianLaw(measure, sys.window, sys.block_dim, mean, cov,
                       shift_kernel=kernel, y_t=sys.y_t)


def law_at_state(model: ValidatedModel, state: MarketState, path: RegimePath,
                 mode: Mode = "risk_neutral",
                 sigmas: list[np.ndarray] | None = None) -> GaussianLaw:
    """Convenience: stacked system + conditional law in one call."""
    sys = build_stacked_system(model, path, state, mode, sigmas)
    return conditional_law(sys, state.y_hist)


def simulate_physical(model: ValidatedModel, horizon: int,
                      seed: int) -> tuple[RegimePath, np.ndarray]:
    """One physical-measure path of regimes and observations.

    Bit-reproducible for a fixed seed; the chain is drawn first, then the
    observation noise, both from a counter-based generator.
    """
    if horizon > model.horizon:
        raise DimensionMismatch(
            f"horizon {horizon} exceeds the exogenous horizon {model.horizon}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    states: list[int] = []
    u = rng.random(horizon)
    for m in range(horizon):
        probs = model.initial_dist if m == 0 else model.transition[states[-1]]
        states.append(int(np.searchsorted(np.cumsum(probs), u[m], side="right")
                          .clip(0, model.n_regimes - 1)))
    eps = rng.standard_normal((horizon, model.n))

    rec = GarchRecursion.start(model)
    y = np.zeros((horizon, model.n))
    prob = chain_probability(model, tuple(states), None)
    for m in range(1, horizon + 1):
        s = states[m - 1]
        sigma = rec.step(s)
        chol = (model.chol_sigmas[s] if model.chol_sigmas is not None
                else cholesky_lower(sigma))
        mean = model.intercept_matrix(s, "physical") @ model.spec.exog[m - 1]
        for i in range(1, model.p + 1):
            j = m - i
            yj = y[j - 1] if j >= 1 else model.presample(j)
            mean = mean + model.spec.lag_coeffs[s, i - 1] @ yj
        y[m - 1] = mean + chol @ eps[m - 1]
    path = RegimePath((1, horizon), tuple(states), prob)
    return path, y
