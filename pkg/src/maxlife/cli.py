"""Batch command-line front end: validate, price, hedge, simulate.

All reports are JSON with a schema_version field and embed the quadrature
tolerance, path counts and truncation bounds, so a fixed seed reproduces a
byte-identical report regardless of thread count.  Exit codes: 0 success,
2 validation failure, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .actuarial import MortalityTilt, load_life_table
from .errors import MaxlifeError
from .hedging import hedge_for_product, lambda_vector, omega
from .mc import Ensemble, mc_collect
from .model_io import (
    SCHEMA_VERSION,
    load_model,
    load_product_doc,
    product_from_dict,
    product_kinds_in,
    report_json,
)
from .msvar import initial_state
from .pricing import premium

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxlife",
        description="Pricing and hedging for equity-linked products on the "
                    "maximum of several assets under a regime-switching VAR")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, table: bool, product: bool) -> None:
        p.add_argument("--model", required=True, help="model JSON file")
        if table:
            p.add_argument("--table", required=True, help="life-table CSV")
        if product:
            p.add_argument("--product", required=True, help="product JSON file")
        p.add_argument("--mvn-tol", type=float, default=1e-6)
        p.add_argument("--out", help="write the JSON report here instead of stdout")

    p_val = sub.add_parser("validate", help="check model/table/product files")
    p_val.add_argument("--model", required=True)
    p_val.add_argument("--table")
    p_val.add_argument("--product")
    p_val.add_argument("--out")

    p_price = sub.add_parser("price", help="single premiums at time 0")
    common(p_price, table=True, product=True)
    p_price.add_argument("--raw-guarantee-leg", action="store_true",
                         help="add the guarantee undiscounted (literal display)")

    p_hedge = sub.add_parser("hedge", help="locally risk-minimizing hedge at time 0")
    common(p_hedge, table=True, product=True)
    p_hedge.add_argument("--discounted-ledger", action="store_true",
                         help="report value and cash in time-0 dollars")

    p_sim = sub.add_parser("simulate", help="simulate a risk-neutral ensemble")
    p_sim.add_argument("--model", required=True)
    p_sim.add_argument("--seed", type=int, default=1)
    p_sim.add_argument("--paths", type=int, default=100_000)
    p_sim.add_argument("--horizon", type=int, help="defaults to the model horizon")
    p_sim.add_argument("--measure", choices=["risk_neutral", "physical"],
                       default="risk_neutral")
    p_sim.add_argument("--antithetic", action="store_true")
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--dump-csv", help="write per-path rows to this CSV file")
    p_sim.add_argument("--out")
    return parser


def _emit(report: dict, out: str | None) -> None:
    text = report_json(report)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_validate(args: argparse.Namespace) -> int:
    report: dict = {"schema_version": SCHEMA_VERSION, "command": "validate"}
    model = load_model(args.model)
    report["model"] = {
        "status": "ok", "n": model.n, "n_z": model.n_z, "n_x": model.n_x,
        "p": model.p, "regimes": model.n_regimes, "horizon": model.horizon,
        "covariance": type(model.spec.covariance).__name__,
    }
    if args.table:
        table = load_life_table(args.table)
        report["table"] = {"status": "ok", "min_age": table.min_age,
                           "max_age": table.max_age}
    if args.product:
        doc = load_product_doc(args.product)
        kinds = product_kinds_in(doc)
        for kind in kinds:
            product_from_dict(doc, kind)
        report["product"] = {"status": "ok", "kinds": kinds}
    _emit(report, args.out)
    return EXIT_OK


def _cmd_price(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    table = load_life_table(args.table)
    doc = load_product_doc(args.product)
    state = initial_state(model)
    results = []
    for kind in product_kinds_in(doc):
        product = product_from_dict(doc, kind)
        tilt = MortalityTilt.zero(product.horizon)
        res = premium(product, model, state, table, tilt,
                      mvn_tol=args.mvn_tol,
                      raw_guarantee_leg=args.raw_guarantee_leg)
        results.append({
            "product_kind": kind,
            "value": res.value,
            "path_count": res.path_count,
            "truncation_bound": res.truncation_bound,
            "mvn_tol": res.mvn_tol,
        })
    report = {
        "schema_version": SCHEMA_VERSION, "command": "price",
        "valuation_time": 0, "mvn_tol": args.mvn_tol,
        "raw_guarantee_leg": bool(args.raw_guarantee_leg),
        "results": results,
    }
    _emit(report, args.out)
    return EXIT_OK


def _cmd_hedge(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    table = load_life_table(args.table)
    doc = load_product_doc(args.product)
    state = initial_state(model)
    om = omega(model, state)
    results = []
    for kind in product_kinds_in(doc):
        product = product_from_dict(doc, kind)
        tilt = MortalityTilt.zero(product.horizon)
        pos = hedge_for_product(product, model, state, table, tilt,
                                mvn_tol=args.mvn_tol,
                                discounted_ledger=args.discounted_ledger)
        lam = lambda_vector(product, model, state, table, tilt,
                            mvn_tol=args.mvn_tol)
        results.append({
            "product_kind": kind,
            "t": pos.t,
            "h": pos.h.tolist(),
            "h0": pos.h0,
            "value": pos.value,
            "singular_omega": pos.singular,
            "lambda": lam.tolist(),
            "mvn_tol": args.mvn_tol,
        })
    report = {
        "schema_version": SCHEMA_VERSION, "command": "hedge",
        "valuation_time": 0, "mvn_tol": args.mvn_tol,
        "discounted_ledger": bool(args.discounted_ledger),
        "omega": om.tolist(),
        "results": results,
    }
    _emit(report, args.out)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    state = initial_state(model)
    horizon = args.horizon if args.horizon is not None else model.horizon
    ens = Ensemble(model, state, horizon, args.paths, args.seed,
                   measure=args.measure, antithetic=args.antithetic,
                   threads=args.threads)

    sums = None
    count = 0
    if args.dump_csv:
        dump = open(args.dump_csv, "w", newline="", encoding="utf-8")
        writer = csv.writer(dump, lineterminator="\n")
        writer.writerow(["path", "step", "regime"]
                        + [f"y{i + 1}" for i in range(model.n)])
    else:
        dump = None
    try:
        stats = mc_collect(ens, lambda c: _chunk_stats(c, dump))
    finally:
        if dump is not None:
            dump.close()
    w = horizon - state.t
    # columns: terminal discounted prices per asset, terminal y per coord
    terminal_xbar = stats[:, :model.n_x]
    terminal_y = stats[:, model.n_x:]
    count = stats.shape[0]
    report = {
        "schema_version": SCHEMA_VERSION, "command": "simulate",
        "measure": args.measure, "seed": args.seed, "n_paths": count,
        "horizon": horizon, "antithetic": bool(args.antithetic),
        "terminal_discounted_price_mean": terminal_xbar.mean(axis=0).tolist(),
        "terminal_discounted_price_se":
            (terminal_xbar.std(axis=0, ddof=1) / np.sqrt(count)).tolist(),
        "terminal_y_mean": terminal_y.mean(axis=0).tolist(),
        "steps": w,
    }
    _emit(report, args.out)
    return EXIT_OK


def _chunk_stats(chunk, dump) -> np.ndarray:
    if dump is not None:
        writer = csv.writer(dump, lineterminator="\n")
        for b in range(chunk.size):
            for r in range(chunk.y.shape[1]):
                writer.writerow([chunk.start + b, chunk.t + r + 1,
                                 int(chunk.regimes[b, r])]
                                + [repr(v) for v in chunk.y[b, r]])
    return np.column_stack([chunk.xbar(-1), chunk.y[:, -1, :]])


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map unknown commands to 1 per the
        # interface contract, keep 0 for --help/--version.
        return EXIT_OK if exc.code == 0 else EXIT_RUNTIME
    handlers = {
        "validate": _cmd_validate,
        "price": _cmd_price,
        "hedge": _cmd_hedge,
        "simulate": _cmd_simulate,
    }
    try:
        return handlers[args.command](args)
    except MaxlifeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
