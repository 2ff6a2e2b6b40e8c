"""Linear-algebra and Gaussian-quadrature substrate.

Provides the Cholesky factorization, half-vectorization, unit-block-lower
triangular solves and the multivariate normal CDF used by every other
module.  All functions are pure and operate on plain numpy arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import DimensionMismatch, NearSingularCovariance, NotPositiveDefinite

# Diagonal bump applied when a covariance is numerically semidefinite.
REGULARIZATION = 1e-12

# Internal quadrature seed: mvn_cdf must be deterministic across calls.
_MVN_SEED = 20030617
_MVN_SCRAMBLES = 8
_MVN_M_MIN = 9
_MVN_M_MAX = 17


@lru_cache(maxsize=32)
def _sobol_block(dim: int, m: int) -> np.ndarray:
    """Scrambled-Sobol points [2^(m-1), 2^m) for all scrambles, shape (K, n, dim).

    Blocks are nested: concatenating blocks m_min..m reproduces the first 2^m
    points of each scrambled sequence, so estimates can accumulate.
    """
    blocks = []
    for s in range(_MVN_SCRAMBLES):
        eng = qmc.Sobol(dim, scramble=True, seed=_MVN_SEED + s)
        if m == _MVN_M_MIN:
            blocks.append(eng.random(1 << m))
        else:
            eng.fast_forward(1 << (m - 1))
            blocks.append(eng.random(1 << (m - 1)))
    return np.stack(blocks)


def ensure_symmetric(m: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Validate a dense symmetric matrix and return its symmetrized copy."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionMismatch("matrix has non-finite entries")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > rtol * scale:
        raise DimensionMismatch("matrix is not symmetric")
    return 0.5 * (m + m.T)


def cholesky_lower(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises NotPositiveDefinite when a pivot is non-positive, which signals
    an invalid covariance model rather than a numerical accident.
    """
    m = ensure_symmetric(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def cholesky_lower_regularized(m: np.ndarray) -> tuple[np.ndarray, bool]:
    """Cholesky factor with a diagonal bump fallback for semidefinite input.

    Returns (factor, regularized).  Degenerate covariances (e.g. an exactly
    deterministic rate row) get REGULARIZATION added to the diagonal; the
    caller is warned so results can be audited.
    """
    m = ensure_symmetric(m)
    try:
        return np.linalg.cholesky(m), False
    except np.linalg.LinAlgError:
        bumped = m + REGULARIZATION * np.eye(m.shape[0])
        try:
            factor = np.linalg.cholesky(bumped)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        warnings.warn("covariance regularized by 1e-12 diagonal bump",
                      NearSingularCovariance, stacklevel=2)
        return factor, True


def vech(m: np.ndarray) -> np.ndarray:
    """Column-stacked lower triangle (including diagonal) of a symmetric matrix."""
    m = ensure_symmetric(m)
    n = m.shape[0]
    return m.T[np.triu_indices(n)]


def unvech(v: np.ndarray) -> np.ndarray:
    """Inverse of vech; the input length must be a triangular number."""
    v = np.asarray(v, dtype=float).ravel()
    n = int((math.isqrt(8 * v.size + 1) - 1) // 2)
    if n * (n + 1) != 2 * v.size:
        raise DimensionMismatch(f"length {v.size} is not a triangular number")
    out = np.zeros((n, n))
    out.T[np.triu_indices(n)] = v
    out = out + out.T - np.diag(np.diag(out))
    return out


def vech_dim(n: int) -> int:
    return n * (n + 1) // 2


@dataclass(frozen=True)
class BlockLowerSystem:
    """Unit-block-lower-triangular system with banded sub-diagonal blocks.

    Diagonal blocks are implicit identities.  ``sub_blocks[(t, i)]`` holds the
    block at (1-based) block row t, coupling to block row t - i, and may be
    present only for 1 <= i <= min(max_lag, t - 1).
    """

    t_blocks: int
    block_dim: int
    sub_blocks: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (t, i), blk in self.sub_blocks.items():
            if not (1 <= t <= self.t_blocks and 1 <= i <= t - 1):
                raise DimensionMismatch(f"sub-block ({t}, {i}) outside the band")
            if blk.shape != (self.block_dim, self.block_dim):
                raise DimensionMismatch(
                    f"sub-block ({t}, {i}) has shape {blk.shape}, "
                    f"expected ({self.block_dim}, {self.block_dim})")

    @property
    def dim(self) -> int:
        return self.t_blocks * self.block_dim

    def _check_rhs(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise DimensionMismatch(
                f"rhs has leading dimension {rhs.shape[0]}, expected {self.dim}")
        return rhs

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Forward substitution for Psi x = rhs; rhs may be a vector or matrix."""
        rhs = self._check_rhs(rhs)
        x = rhs.copy()
        d = self.block_dim
        for t in range(1, self.t_blocks + 1):
            row = slice((t - 1) * d, t * d)
            for i in range(1, t):
                blk = self.sub_blocks.get((t, i))
                if blk is not None:
                    x[row] -= blk @ x[slice((t - 1 - i) * d, (t - i) * d)]
        return x

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        """Backward substitution for Psi^T x = rhs."""
        rhs = self._check_rhs(rhs)
        x = rhs.copy()
        d = self.block_dim
        for t in range(self.t_blocks, 0, -1):
            row = slice((t - 1) * d, t * d)
            for i in range(1, self.t_blocks - t + 1):
                blk = self.sub_blocks.get((t + i, i))
                if blk is not None:
                    x[row] -= blk.T @ x[slice((t + i - 1) * d, (t + i) * d)]
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Block multiplication Psi x."""
        x = self._check_rhs(x)
        out = x.copy()
        d = self.block_dim
        for (t, i), blk in self.sub_blocks.items():
            out[(t - 1) * d:t * d] += blk @ x[(t - 1 - i) * d:(t - i) * d]
        return out

    def dense(self) -> np.ndarray:
        """Materialize the full matrix (tests and small systems only)."""
        d = self.block_dim
        out = np.eye(self.dim)
        for (t, i), blk in self.sub_blocks.items():
            out[(t - 1) * d:t * d, (t - 1 - i) * d:(t - i) * d] = blk
        return out


def solve_unit_block_lower(sys: BlockLowerSystem, rhs: np.ndarray) -> np.ndarray:
    return sys.solve(rhs)


@dataclass(frozen=True)
class OrthantQuery:
    """Upper-orthant probability query P[Z <= upper] for Z ~ N(mean, cov)."""

    upper: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    tol: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).ravel())
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        d = self.upper.size
        if self.mean.size != d or self.cov.shape != (d, d):
            raise DimensionMismatch(
                f"query dims disagree: upper {d}, mean {self.mean.size}, "
                f"cov {self.cov.shape}")
        if not 0.0 < self.tol <= 1e-2:
            raise DimensionMismatch(f"tol must lie in (0, 1e-2], got {self.tol}")


def mvn_cdf(q: OrthantQuery) -> float:
    """Multivariate normal CDF via separation-of-variables quasi-Monte Carlo.

    Evaluates P[Z <= upper] for Z ~ N(mean, cov) to absolute accuracy ``tol``
    (3.5-sigma confidence from randomized lattice shifts).  Deterministic:
    the lattice randomization uses a fixed internal seed.  Intended for
    dimension <= 10.
    """
    b = q.upper - q.mean
    if np.any(np.isneginf(b)):
        return 0.0
    finite = ~np.isposinf(b)
    if not np.all(finite):
        # +inf coordinates impose no constraint; marginalize them away.
        idx = np.where(finite)[0]
        if idx.size == 0:
            return 1.0
        sub = OrthantQuery(q.upper[idx], q.mean[idx],
                           q.cov[np.ix_(idx, idx)], q.tol)
        return mvn_cdf(sub)

    d = b.size
    if d == 0:
        return 1.0
    if d > 10:
        raise DimensionMismatch(f"mvn_cdf supports dimension <= 10, got {d}")
    if d == 1:
        var = float(q.cov[0, 0])
        if var <= 0.0:
            var = max(var, 0.0) + REGULARIZATION
        return float(ndtr(b[0] / math.sqrt(var)))

    # Sort variables by standardized bound: tight constraints first improves
    # the conditioning of the sequential factorization.
    sd = np.sqrt(np.maximum(np.diag(q.cov), REGULARIZATION))
    order = np.argsort(b / sd, kind="stable")
    b = b[order]
    cov = q.cov[np.ix_(order, order)]
    chol, _ = cholesky_lower_regularized(cov)

    totals = np.zeros(_MVN_SCRAMBLES)
    estimate = 0.0
    error = math.inf
    for m in range(_MVN_M_MIN, _MVN_M_MAX + 1):
        pts = _sobol_block(d - 1, m)
        block_n = pts.shape[1]
        totals += _genz_sums(b, chol, pts.reshape(-1, d - 1)).reshape(
            _MVN_SCRAMBLES, block_n).sum(axis=1)
        means = totals / (1 << m)
        estimate = float(np.mean(means))
        # t(7, 0.995) ~= 3.5: roughly 99% confidence on the error bound.
        error = 3.5 * float(np.std(means, ddof=1)) / math.sqrt(_MVN_SCRAMBLES)
        if error <= q.tol:
            break
    if error > q.tol:
        warnings.warn(
            f"mvn_cdf stopped at error estimate {error:.2e} > tol {q.tol:.2e}",
            NearSingularCovariance, stacklevel=2)
    return min(max(estimate, 0.0), 1.0)


def _genz_sums(b: np.ndarray, chol: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-point values of the sequentially conditioned probability product."""
    d = b.size
    npts = w.shape[0]
    f = np.full(npts, ndtr(b[0] / chol[0, 0]))
    y = np.zeros((npts, d - 1))
    e = f.copy()
    for i in range(1, d):
        u = np.clip(w[:, i - 1] * e, 1e-16, 1.0 - 1e-16)
        y[:, i - 1] = ndtri(u)
        resid = b[i] - y[:, :i] @ chol[i, :i]
        e = ndtr(resid / chol[i, i])
        f = f * e
    return f
