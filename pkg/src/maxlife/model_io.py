"""JSON model/product files and canonical report serialization.

Model file schema (all matrices row-major nested lists):

    {
      "n_z": 1, "n_x": 2, "p": 1,
      "regimes": [{"intercept": [[0.01], ...],       # n x k
                   "lags": [[[...]]]},               # p matrices, n x n
                  ...],                              # one entry per regime
      "transition": [[0.9, 0.1], [0.2, 0.8]],
      "initial_dist": [0.6, 0.4],
      "covariance": {"kind": "constant_per_regime", "sigmas": [[[...]], ...]}
                 or {"kind": "vech_garch", "b0": [[...], ...],
                     "lags": [[[[...]]], ...], "presample": [[[...]], ...]},
      "presample_y": [[...]],                        # max(p, 1) rows, newest first
      "exog": [[1.0], ...]                           # T rows; or "horizon": T
    }

Product file schema:

    {
      "kind": "unit_linked_endowment",               # optional: omit for all four
      "age": 60, "horizon": 3,
      "guarantees": [1.0, 1.0, 1.0],                 # G_k, k = 1..horizon
      "weights": [[0.01, 0.0105], ...]               # w_k rows, k = 1..horizon
    }
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Union

import numpy as np

from .errors import DimensionMismatch
from .msvar import (
    CovarianceConstant,
    CovarianceVechGarch,
    ModelSpec,
    ValidatedModel,
    validate_spec,
)
from .pricing import ProductSpec

SCHEMA_VERSION = 1


def model_from_dict(doc: dict[str, Any]) -> ValidatedModel:
    try:
        n_z = int(doc["n_z"])
        n_x = int(doc["n_x"])
        p = int(doc["p"])
        regimes = doc["regimes"]
        intercepts = np.array([r["intercept"] for r in regimes], dtype=float)
        n = n_z + n_x
        big_n = len(regimes)
        if p > 0:
            lag_coeffs = np.array([r["lags"] for r in regimes], dtype=float)
        else:
            lag_coeffs = np.zeros((big_n, 0, n, n))
        cov_doc = doc["covariance"]
        if cov_doc["kind"] == "constant_per_regime":
            covariance: Any = CovarianceConstant(
                np.array(cov_doc["sigmas"], dtype=float))
        elif cov_doc["kind"] == "vech_garch":
            covariance = CovarianceVechGarch(
                b0=np.array(cov_doc["b0"], dtype=float),
                lags=np.array(cov_doc["lags"], dtype=float),
                presample=np.array(cov_doc["presample"], dtype=float))
        else:
            raise DimensionMismatch(
                f"unknown covariance kind {cov_doc['kind']!r}")
        if "exog" in doc:
            exog = np.array(doc["exog"], dtype=float)
        else:
            exog = np.ones((int(doc["horizon"]), intercepts.shape[2]))
        spec = ModelSpec(
            n_z=n_z, n_x=n_x, p=p,
            intercepts=intercepts, lag_coeffs=lag_coeffs,
            transition=np.array(doc["transition"], dtype=float),
            initial_dist=np.array(doc["initial_dist"], dtype=float),
            covariance=covariance,
            presample_y=np.array(doc["presample_y"], dtype=float),
            exog=exog,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionMismatch(f"malformed model document: {exc}") from exc
    return validate_spec(spec)


def load_model(path: Union[str, Path]) -> ValidatedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def product_from_dict(doc: dict[str, Any], kind: str | None = None) -> ProductSpec:
    try:
        return ProductSpec(
            kind=kind or doc["kind"],
            age=int(doc["age"]),
            horizon=int(doc["horizon"]),
            guarantees=np.array(doc["guarantees"], dtype=float),
            weights=np.array(doc["weights"], dtype=float),
            alive=bool(doc.get("alive", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionMismatch(f"malformed product document: {exc}") from exc


def product_kinds_in(doc: dict[str, Any]) -> list[str]:
    """Product kinds a document requests: its own kind, or all four."""
    from .pricing import _PRODUCT_KINDS
    if "kind" in doc:
        return [doc["kind"]]
    return list(_PRODUCT_KINDS)


def load_product_doc(path: Union[str, Path]) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def report_json(report: dict[str, Any]) -> str:
    """Canonical report encoding: sorted keys, fixed separators, newline."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
