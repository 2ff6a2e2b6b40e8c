import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_model
from maxlife.errors import (
    DimensionMismatch,
    InvalidTransitionMatrix,
    NotPositiveDefinite,
)
from maxlife.msvar import (
    CovarianceConstant,
    CovarianceVechGarch,
    MarketState,
    ModelSpec,
    RegimePath,
    build_stacked_system,
    conditional_law,
    covariance_sequence,
    initial_state,
    law_at_state,
    simulate_physical,
    validate_spec,
)
from maxlife.numerics import cholesky_lower, unvech, vech


def _single_regime_spec(sigma, intercept, lag):
    n = sigma.shape[0]
    return ModelSpec(
        n_z=1, n_x=n - 1, p=1,
        intercepts=np.array([intercept]),
        lag_coeffs=np.array([[lag]]),
        transition=np.array([[1.0]]),
        initial_dist=np.array([1.0]),
        covariance=CovarianceConstant(np.array([sigma])),
        presample_y=np.zeros((1, n)),
        exog=np.ones((4, 1)),
    )


class TestValidateSpec:
    def test_single_regime_valid(self):
        spec = _single_regime_spec(np.eye(2), np.zeros((2, 1)), 0.1 * np.eye(2))
        model = validate_spec(spec)
        assert model.n_regimes == 1

    def test_bad_row_sum(self):
        spec = _single_regime_spec(np.eye(2), np.zeros((2, 1)), 0.1 * np.eye(2))
        bad = ModelSpec(**{**spec.__dict__, "transition": np.array([[0.9]])})
        with pytest.raises(InvalidTransitionMatrix):
            validate_spec(bad)

    def test_negative_variance(self):
        sigma = np.array([[-1.0, 0.0], [0.0, 1.0]])
        spec = _single_regime_spec(sigma, np.zeros((2, 1)), 0.1 * np.eye(2))
        with pytest.raises(NotPositiveDefinite):
            validate_spec(spec)

    def test_presample_shape_checked(self):
        spec = _single_regime_spec(np.eye(2), np.zeros((2, 1)), 0.1 * np.eye(2))
        bad = ModelSpec(**{**spec.__dict__, "presample_y": np.zeros((2, 2))})
        with pytest.raises(DimensionMismatch):
            validate_spec(bad)


class TestCovarianceSequence:
    def test_constant_per_regime(self, r2):
        path = RegimePath((1, 3), (0, 1, 0), 0.5)
        seq = covariance_sequence(r2, path)
        sig = r2.spec.covariance.sigmas
        assert_allclose(seq, [sig[0], sig[1], sig[0]])

    def test_garch_zero_lags_is_b0(self, rng):
        model = random_model(rng, garch=True)
        cov = model.spec.covariance
        zeroed = CovarianceVechGarch(b0=cov.b0,
                                     lags=np.zeros_like(cov.lags),
                                     presample=cov.presample)
        spec = ModelSpec(**{**model.spec.__dict__, "covariance": zeroed})
        model0 = validate_spec(spec)
        path = RegimePath((1, 3), (1, 0, 1), 0.25)
        for s, sig in zip(path.states, covariance_sequence(model0, path)):
            assert_allclose(sig, unvech(cov.b0[s]))

    def test_garch_fixed_point(self, rng):
        # b0 = 0.5 vech(S), B1 = 0.5 I, presample S  ->  sigma stays at S
        model = random_model(rng, garch=True)
        cov = model.spec.covariance
        base = cov.presample[0]
        mdim = cov.b0.shape[1]
        fixed = CovarianceVechGarch(
            b0=np.stack([0.5 * vech(base)] * model.n_regimes),
            lags=np.stack([[0.5 * np.eye(mdim)]] * model.n_regimes),
            presample=cov.presample)
        model_fp = validate_spec(
            ModelSpec(**{**model.spec.__dict__, "covariance": fixed}))
        path = RegimePath((1, 4), (0, 1, 1, 0), 0.1)
        for sig in covariance_sequence(model_fp, path):
            assert_allclose(sig, base, rtol=1e-12)

    def test_garch_hand_recursion(self, rng):
        model = random_model(rng, garch=True)
        cov = model.spec.covariance
        states = (1, 0, 1, 1)
        path = RegimePath((1, 4), states, 0.1)
        seq = covariance_sequence(model, path)
        v = vech(cov.presample[0])
        for s, sig in zip(states, seq):
            v = cov.b0[s] + cov.lags[s, 0] @ v
            assert_allclose(vech(sig), v, rtol=1e-12)

    def test_garch_prefix_dependence_only(self, rng):
        model = random_model(rng, garch=True)
        a = covariance_sequence(model, RegimePath((1, 4), (0, 1, 0, 0), 0.1))
        b = covariance_sequence(model, RegimePath((1, 4), (0, 1, 0, 1), 0.1))
        for m in range(3):
            assert_allclose(a[m], b[m])


def _iterated_means(model, state, path, mode):
    """Step-by-step conditional-mean oracle for the stacked system."""
    t = state.t
    values = {}
    p_eff = model.effective_p(mode)
    for r, s in enumerate(path.states, start=1):
        m = t + r
        mean = model.intercept_matrix(s, mode) @ model.spec.exog[m - 1]
        for i in range(1, p_eff + 1):
            j = m - i
            if j > t:
                prev = values[j]
            else:
                prev = state.y_at(model, j)
            mean = mean + model.lag_matrix(s, i, mode) @ prev
        if mode == "risk_neutral":
            sigmas = covariance_sequence(
                model, RegimePath((1, m), tuple(state.regimes) + path.states[:r],
                                  path.chain_prob))
            mean = mean - 0.5 * np.diag(sigmas[-1])
        values[m] = mean
    return np.concatenate([values[t + r] for r in range(1, len(path.states) + 1)])


class TestStackedSystem:
    def test_p0_physical_identity(self, rng):
        model = random_model(rng, p=0, n_x=1, n_regimes=1, horizon=3)
        state = initial_state(model)
        path = RegimePath((1, 3), (0, 0, 0), 1.0)
        sys = build_stacked_system(model, path, state, "physical")
        assert not sys.psi22.sub_blocks
        for r in range(3):
            assert_allclose(sys.delta2[r * 2:(r + 1) * 2],
                            model.spec.intercepts[0] @ model.spec.exog[r])

    def test_window_length_one(self, r2):
        state = initial_state(r2)
        path = RegimePath((1, 1), (0,), 1.0)
        sys = build_stacked_system(r2, path, state, "risk_neutral")
        assert sys.psi22.t_blocks == 1
        assert not sys.psi22.sub_blocks

    @pytest.mark.parametrize("mode", ["physical", "risk_neutral"])
    def test_mean_matches_iterated_recursion(self, r2, mode):
        state = initial_state(r2)
        path = RegimePath((1, 4), (0, 1, 1, 0), 0.1)
        law = law_at_state(r2, state, path, mode)
        oracle = _iterated_means(r2, state, path, mode)
        assert_allclose(law.mean, oracle, atol=1e-10)

    @pytest.mark.parametrize("mode", ["physical", "risk_neutral"])
    def test_mean_matches_iterated_recursion_observed_history(self, r2, rng, mode):
        y_hist = r2.spec.presample_y[0] + rng.normal(scale=0.05, size=(2, 3))
        state = MarketState(2, y_hist, (0, 1))
        path = RegimePath((3, 5), (1, 0, 1), 0.2)
        law = law_at_state(r2, state, path, mode)
        oracle = _iterated_means(r2, state, path, mode)
        assert_allclose(law.mean, oracle, atol=1e-10)

    def test_residual_identity_on_simulated_path(self, r2):
        path, y = simulate_physical(r2, 5, seed=7)
        state = initial_state(r2)
        sys = build_stacked_system(r2, path, state, "physical")
        resid = sys.psi22.apply(y.ravel()) - sys.delta2
        for m in range(1, 6):
            prev = y[m - 2] if m >= 2 else r2.spec.presample_y[0]
            s = path.states[m - 1]
            fitted = r2.spec.intercepts[s] @ r2.spec.exog[m - 1] \
                + r2.spec.lag_coeffs[s, 0] @ prev
            assert_allclose(resid[(m - 1) * 3:m * 3], y[m - 1] - fitted,
                            atol=1e-12)

    def test_cov_psd_random_specs(self, rng):
        for trial in range(8):
            model = random_model(rng, p=int(rng.integers(0, 3)),
                                 garch=bool(trial % 2))
            state = initial_state(model)
            depth = min(3, model.horizon)
            states = tuple(int(rng.integers(0, model.n_regimes))
                           for _ in range(depth))
            path = RegimePath((1, depth), states, 0.5)
            law = law_at_state(model, state, path, "risk_neutral")
            assert_allclose(law.cov, law.cov.T, atol=1e-12)
            assert np.linalg.eigvalsh(law.cov).min() > -1e-10
            cholesky_lower(law.cov + 1e-12 * np.eye(law.cov.shape[0]))

    def test_tower_single_step(self, r2, rng):
        y_hist = r2.spec.presample_y[0] + rng.normal(scale=0.04, size=(1, 3))
        state = MarketState(1, y_hist, (1,))
        path = RegimePath((2, 5), (0, 1, 0, 1), 0.1)
        law = law_at_state(r2, state, path, "risk_neutral")
        s = path.states[0]
        sigma = r2.spec.covariance.sigmas[s]
        direct = r2.rn_intercepts[s] @ r2.spec.exog[1] \
            + r2.rn_lags[s, 0] @ y_hist[0] - 0.5 * np.diag(sigma)
        assert_allclose(law.block_mean(2), direct, atol=1e-10)

    def test_garch_stacked_system(self, rng):
        model = random_model(rng, garch=True)
        state = initial_state(model)
        path = RegimePath((1, 3), (0, 1, 1), 0.3)
        law = law_at_state(model, state, path, "risk_neutral")
        oracle = _iterated_means(model, state, path, "risk_neutral")
        assert_allclose(law.mean, oracle, atol=1e-10)


class TestSimulatePhysical:
    def test_seed_reproducibility(self, r2):
        a = simulate_physical(r2, 5, seed=11)
        b = simulate_physical(r2, 5, seed=11)
        assert a[0] == b[0]
        assert_allclose(a[1], b[1])

    def test_single_regime_constant_path(self, r1):
        path, _ = simulate_physical(r1, 5, seed=3)
        assert path.states == (0,) * 5

    def test_transition_frequencies(self, rng):
        horizon = 20_000
        model = random_model(rng, n_x=1, horizon=horizon)
        path, _ = simulate_physical(model, horizon, seed=5)
        states = np.array(path.states)
        trans = model.transition
        for i in range(model.n_regimes):
            at_i = np.where(states[:-1] == i)[0]
            n_i = at_i.size
            for j in range(model.n_regimes):
                freq = np.mean(states[at_i + 1] == j)
                se = np.sqrt(trans[i, j] * (1 - trans[i, j]) / n_i)
                assert abs(freq - trans[i, j]) < 3 * se + 1e-12


class TestLawVersusMonteCarlo:
    @pytest.mark.parametrize("measure", ["physical", "risk_neutral"])
    def test_moments_agree_with_simulation(self, r2, measure):
        from maxlife.mc import Ensemble, mc_collect

        state = initial_state(r2)
        n_paths = 120_000
        ens = Ensemble(r2, state, 3, n_paths, seed=42, measure=measure)
        y_all = mc_collect(ens, lambda c: c.y.reshape(c.size, -1))
        regimes = mc_collect(ens, lambda c: c.regimes.astype(float))

        # condition on the most frequent regime path to pin the mixture
        target = np.array([0, 0, 0], dtype=float)
        mask = np.all(regimes == target, axis=1)
        sub = y_all[mask]
        prob_path = r2.initial_dist[0] * r2.transition[0, 0] ** 2
        path = RegimePath((1, 3), (0, 0, 0), float(prob_path))
        law = law_at_state(r2, state, path, measure)

        se_mean = np.sqrt(np.diag(law.cov) / sub.shape[0])
        assert np.all(np.abs(sub.mean(axis=0) - law.mean) < 4 * se_mean)

        sample_cov = np.cov(sub.T)
        d = law.cov.shape[0]
        var = np.diag(law.cov)
        se_cov = np.sqrt((np.outer(var, var) + law.cov ** 2) / sub.shape[0])
        assert np.all(np.abs(sample_cov - law.cov) < 4 * se_cov + 1e-12)
