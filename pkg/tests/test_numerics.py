import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import ndtr, owens_t

from maxlife.errors import DimensionMismatch, NearSingularCovariance, NotPositiveDefinite
from maxlife.numerics import (
    BlockLowerSystem,
    OrthantQuery,
    cholesky_lower,
    cholesky_lower_regularized,
    mvn_cdf,
    solve_unit_block_lower,
    unvech,
    vech,
)


class TestCholesky:
    def test_identity(self):
        assert_allclose(cholesky_lower(np.eye(2)), np.eye(2))

    def test_closed_form_2x2(self):
        assert_allclose(cholesky_lower(np.array([[4.0, 2.0], [2.0, 5.0]])),
                        np.array([[2.0, 0.0], [1.0, 2.0]]))

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_lower(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_round_trip_random(self, rng):
        for _ in range(25):
            n = rng.integers(1, 6)
            lower = np.tril(rng.normal(size=(n, n)))
            lower[np.diag_indices(n)] = rng.uniform(0.2, 2.0, size=n)
            again = cholesky_lower(lower @ lower.T)
            assert_allclose(again, lower, rtol=1e-8, atol=1e-10)

    def test_regularized_handles_exact_singular(self):
        singular = np.array([[0.0, 0.0], [0.0, 1.0]])
        with pytest.warns(NearSingularCovariance):
            factor, flagged = cholesky_lower_regularized(singular)
        assert flagged
        assert_allclose(factor @ factor.T, singular, atol=1e-11)


class TestVech:
    def test_definitional(self):
        m = np.array([[1.0, 2.0], [2.0, 3.0]])
        assert_allclose(vech(m), [1.0, 2.0, 3.0])

    def test_column_stacked_order(self):
        m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
        assert_allclose(vech(m), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

    def test_round_trip(self, rng):
        a = rng.normal(size=(3, 3))
        m = a + a.T
        assert_allclose(unvech(vech(m)), m)

    def test_non_triangular_length(self):
        with pytest.raises(DimensionMismatch):
            unvech(np.arange(4.0))


class TestBlockLowerSolve:
    def test_identity_system(self):
        sys = BlockLowerSystem(3, 2, {})
        rhs = np.arange(6.0)
        assert_allclose(solve_unit_block_lower(sys, rhs), rhs)

    def test_against_dense_lu(self, rng):
        a = 0.5 * rng.normal(size=(2, 2))
        sys = BlockLowerSystem(3, 2, {(2, 1): a, (3, 1): a})
        rhs = rng.normal(size=6)
        x = solve_unit_block_lower(sys, rhs)
        assert_allclose(x, np.linalg.solve(sys.dense(), rhs), atol=1e-12)

    def test_wrong_length(self):
        sys = BlockLowerSystem(3, 2, {})
        with pytest.raises(DimensionMismatch):
            solve_unit_block_lower(sys, np.zeros(5))

    def test_apply_round_trip(self, rng):
        for _ in range(10):
            blocks = {}
            t_blocks, d = 4, 3
            for t in range(2, t_blocks + 1):
                for i in range(1, t):
                    if rng.random() < 0.7:
                        blocks[(t, i)] = rng.normal(size=(d, d))
            sys = BlockLowerSystem(t_blocks, d, blocks)
            rhs = rng.normal(size=t_blocks * d)
            assert_allclose(sys.apply(sys.solve(rhs)), rhs, atol=1e-10)
            assert_allclose(sys.dense().T @ sys.solve_transposed(rhs), rhs,
                            atol=1e-10)

    def test_band_validation(self):
        with pytest.raises(DimensionMismatch):
            BlockLowerSystem(2, 2, {(1, 1): np.zeros((2, 2))})


def _bvn_cdf(h: float, k: float, rho: float) -> float:
    """Bivariate standard normal CDF via Owen's T (independent oracle).

    Valid for nonzero h, k; the test generator keeps arguments away from 0.
    """
    if abs(rho) < 1e-15:
        return float(ndtr(h) * ndtr(k))
    denom = math.sqrt(1.0 - rho * rho)
    value = 0.5 * (ndtr(h) + ndtr(k))
    value -= owens_t(h, (k - rho * h) / (h * denom))
    value -= owens_t(k, (h - rho * k) / (k * denom))
    if h * k < 0.0:
        value -= 0.5
    return float(value)


class TestMvnCdf:
    def test_median_univariate(self):
        assert mvn_cdf(OrthantQuery([0.0], [0.0], [[1.0]])) == pytest.approx(0.5)

    def test_independent_quadrant(self):
        q = OrthantQuery([0.0, 0.0], [0.0, 0.0], np.eye(2))
        assert mvn_cdf(q) == pytest.approx(0.25, abs=1e-6)

    def test_orthant_formula_correlated(self):
        rho = 0.5
        q = OrthantQuery([0.0, 0.0], [0.0, 0.0], [[1.0, rho], [rho, 1.0]])
        assert mvn_cdf(q) == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi),
                                           abs=1e-6)

    def test_bivariate_against_owens_t(self, rng):
        for _ in range(20):
            h, k = rng.normal(scale=1.2, size=2)
            h += math.copysign(0.05, h)
            k += math.copysign(0.05, k)
            rho = rng.uniform(-0.9, 0.9)
            cov = np.array([[1.0, rho], [rho, 1.0]])
            ours = mvn_cdf(OrthantQuery([h, k], [0.0, 0.0], cov, 1e-7))
            assert ours == pytest.approx(_bvn_cdf(h, k, rho), abs=5e-7)

    def test_limits(self):
        assert mvn_cdf(OrthantQuery([np.inf, np.inf], [0, 0], np.eye(2))) == 1.0
        assert mvn_cdf(OrthantQuery([-np.inf, 0.0], [0, 0], np.eye(2))) == 0.0
        # one vacuous coordinate marginalizes away
        q = OrthantQuery([0.0, np.inf], [0.0, 0.0], np.eye(2))
        assert mvn_cdf(q) == pytest.approx(0.5)

    def test_monotone_in_upper(self, rng):
        for _ in range(100):
            d = int(rng.integers(2, 5))
            a = rng.normal(size=(d, d))
            cov = a @ a.T + 0.5 * np.eye(d)
            upper = rng.normal(size=d)
            bump = np.zeros(d)
            bump[rng.integers(0, d)] = abs(rng.normal()) + 0.05
            lo = mvn_cdf(OrthantQuery(upper, np.zeros(d), cov, 1e-5))
            hi = mvn_cdf(OrthantQuery(upper + bump, np.zeros(d), cov, 1e-5))
            assert hi >= lo - 3e-5

    def test_deterministic(self):
        cov = np.array([[1.0, 0.4], [0.4, 2.0]])
        q = OrthantQuery([0.3, -0.2], [0.0, 0.1], cov)
        assert mvn_cdf(q) == mvn_cdf(q)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            OrthantQuery([0.0, 1.0], [0.0], np.eye(2))

    def test_tolerance_domain(self):
        with pytest.raises(DimensionMismatch):
            OrthantQuery([0.0], [0.0], [[1.0]], tol=0.5)

    def test_dimension_cap(self):
        with pytest.raises(DimensionMismatch):
            mvn_cdf(OrthantQuery(np.zeros(11), np.zeros(11), np.eye(11)))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=0, max_value=2**31))
def test_cholesky_round_trip_property(n, seed):
    rng = np.random.default_rng(seed)
    lower = np.tril(rng.normal(size=(n, n)))
    lower[np.diag_indices(n)] = rng.uniform(0.3, 1.5, size=n)
    assert_allclose(cholesky_lower(lower @ lower.T), lower, rtol=1e-8, atol=1e-10)
