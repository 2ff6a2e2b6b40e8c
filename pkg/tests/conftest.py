import pathlib

import numpy as np
import pytest

from maxlife.actuarial import load_life_table
from maxlife.model_io import load_model, load_product_doc, product_from_dict

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"


@pytest.fixture(scope="session")
def r1():
    return load_model(FIXTURES / "model_r1.json")


@pytest.fixture(scope="session")
def r2():
    return load_model(FIXTURES / "model_r2.json")


@pytest.fixture(scope="session")
def table():
    return load_life_table(FIXTURES / "table_3age.csv")


@pytest.fixture(scope="session")
def product_doc():
    return load_product_doc(FIXTURES / "product_r2.json")


@pytest.fixture(scope="session")
def products(product_doc):
    kinds = ("segregated_term", "segregated_endowment",
             "unit_linked_term", "unit_linked_endowment")
    return {kind: product_from_dict(product_doc, kind) for kind in kinds}


@pytest.fixture
def rng():
    return np.random.default_rng(991)


def random_model(rng, n_z=1, n_x=2, p=1, n_regimes=2, horizon=4, garch=False):
    """Small admissible model with stable lags and well-scaled covariances."""
    from maxlife.msvar import (
        CovarianceConstant,
        CovarianceVechGarch,
        ModelSpec,
        validate_spec,
    )
    from maxlife.numerics import vech, vech_dim

    n = n_z + n_x
    intercepts = rng.normal(scale=0.02, size=(n_regimes, n, 1))
    lag_coeffs = rng.normal(scale=0.15 / max(p, 1), size=(n_regimes, p, n, n))
    trans = rng.uniform(0.2, 1.0, size=(n_regimes, n_regimes))
    trans /= trans.sum(axis=1, keepdims=True)
    init = rng.uniform(0.2, 1.0, size=n_regimes)
    init /= init.sum()

    def random_cov():
        a = rng.normal(scale=0.12, size=(n, n))
        return a @ a.T + np.diag(rng.uniform(0.01, 0.05, size=n))

    if garch:
        mdim = vech_dim(n)
        base = [random_cov() for _ in range(n_regimes)]
        b0 = np.stack([0.6 * vech(s) for s in base])
        lags = np.stack([[0.4 * np.eye(mdim)] for _ in range(n_regimes)])
        presample = np.stack([random_cov()])
        cov = CovarianceVechGarch(b0=b0, lags=lags, presample=presample)
    else:
        cov = CovarianceConstant(np.stack([random_cov()
                                           for _ in range(n_regimes)]))
    spec = ModelSpec(
        n_z=n_z, n_x=n_x, p=p,
        intercepts=intercepts, lag_coeffs=lag_coeffs,
        transition=trans, initial_dist=init, covariance=cov,
        presample_y=rng.normal(scale=0.3, size=(max(p, 1), n)),
        exog=np.ones((horizon, 1)),
    )
    return validate_spec(spec)
