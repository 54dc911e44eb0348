"""Command-line entry point.

Exit status: 0 when everything succeeded, 2 when some evaluation cells
failed but results were written, 1 on a hard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, SeriesFormatError, load_config, load_series, parse_dgp, write_series
from .dgp import DgpSpec, DynRegression, GarchGaussian, LstarT, SvLeverage, SvSmoothTransition, simulate
from .harness import (ExperimentConfig, build_model, coherence_report, estimate_gvp_predictive,
                      merging_report, rolling_evaluate, select_covariates)
from .pipeline import interval_forecast
from .scoring import ScoringRule
from .vb import VariationalParams, VbConfig, calibrate

log = logging.getLogger("gvp")

ALL_RULES = ("LS", "CLS10", "CLS20", "CLS80", "CLS90", "CRPS", "MSIS")
MIXTURE_RULES = ("LS", "CLS10", "CLS20", "CLS80", "CLS90", "MSIS")
BNN_INPUTS = {1: (), 2: ("x1",), 3: ("x2",), 4: ("x1", "x2")}
TOY_DGPS = {"garch": GarchGaussian, "sv-leverage": SvLeverage, "sv-smooth": SvSmoothTransition}


def replicate_configs(target: str, scale: str, seed: int = 0, engine: str | None = None,
                      dgp: str = "sv-leverage") -> dict[str, ExperimentConfig]:
    """Named experiment configurations for the three simulation studies."""
    desk = scale == "desk"
    if target == "toy-garch":
        spec = DgpSpec(TOY_DGPS[dgp](), T=3000 if desk else 6000, seed=seed)
        return {f"toy-garch-{dgp}": ExperimentConfig(
            spec, model="garch", update_rules=ALL_RULES, n0=1000, refit_every=250 if desk else 1,
            M_predictive=1000, engine=engine or "both", seed=seed, mcmc_adaptation="full-covariance")}
    if target == "lstar-mixture":
        spec = DgpSpec(LstarT(), T=1200 if desk else 2500, seed=seed)
        return {"lstar-mixture": ExperimentConfig(
            spec, model="mixture", model_options={"K": 5 if desk else 20}, update_rules=MIXTURE_RULES,
            n0=400 if desk else 500, refit_every=200 if desk else 1, M_predictive=1000,
            engine=engine or "vb", seed=seed)}
    if target == "bnn-models":
        spec = DgpSpec(DynRegression(), T=1500 if desk else 4000, seed=seed)
        return {f"bnn-model{k}": ExperimentConfig(
            spec, model="bnn", model_options={"covariates": list(cov)}, update_rules=ALL_RULES,
            n0=750 if desk else 2000, refit_every=250 if desk else 1, M_predictive=1000,
            engine=engine or "vb", seed=seed) for k, cov in BNN_INPUTS.items()}
    raise ValueError(f"unknown replication target {target!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, VariationalParams):
        return {"mu": obj.mu.tolist(), "d": obj.d.tolist()}
    return obj


def write_manifest(out_dir: str, command: str, args: argparse.Namespace, extra: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "argv": sys.argv[1:],
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "numpy": np.__version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2)


def _write_matrices(out_dir: str, name: str, config: ExperimentConfig, results: dict) -> tuple[dict, int]:
    summary = {}
    n_failed = 0
    for engine, m in results.items():
        stem = os.path.join(out_dir, f"{name}_{engine}")
        m.to_csv(stem + "_matrix.csv")
        m.log_to_csv(stem + "_scores.csv", config.n0)
        coh = coherence_report(m)
        n_failed += len(m.failed)
        summary[engine] = {
            "metadata": m.metadata,
            "failed_cells": m.failed,
            "degenerate_counts": m.n_degenerate,
            "coherence": [c._asdict() for c in coh],
            "diagonal_best": sum(c.diagonal_best for c in coh),
        }
        print(f"== {name} [{engine}] H={m.H}")
        print(m.format())
        print("diagonal best in "
              f"{sum(c.diagonal_best for c in coh)} of {len(coh)} columns: "
              + ", ".join(c.column for c in coh if c.diagonal_best))
    if "vb" in results and "mcmc" in results:
        mr = merging_report(results["vb"], results["mcmc"])
        summary["merging"] = {"max_discrepancy": mr.max_discrepancy, "worst_cell": mr.worst_cell,
                              "differences": mr.differences}
        print(f"max |GVP - exact| = {mr.max_discrepancy:.4f} at {mr.worst_cell}")
    return summary, n_failed


def cmd_simulate(args) -> int:
    if args.config:
        cfg = load_config(args.config, {"seed": args.seed})
        spec = cfg.dgp
    else:
        import configparser
        cp = configparser.ConfigParser()
        cp.read_dict({"dgp": {"kind": args.dgp, "T": str(args.T)}})
        spec = parse_dgp(cp["dgp"], args.seed if args.seed is not None else 0)
    sim = simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "series.csv")
    write_series(path, sim.y, sim.x)
    write_manifest(args.out, "simulate", args, {"dgp": spec.kind, "T": spec.T, "seed": spec.seed})
    print(path)
    return 0


def _covariate_columns(path) -> list[str]:
    """Contiguous ``x1, x2, ...`` columns present in the CSV header."""
    header = _header(path)
    cols = []
    while f"x{len(cols) + 1}" in header:
        cols.append(f"x{len(cols) + 1}")
    return cols


def _load(args):
    return load_series(args.series, args.column, _covariate_columns(args.series))


def _model_for_series(args, y, x):
    overrides = {"model": args.model, "seed": args.seed}
    cfg = load_config(args.config, overrides) if args.config else None
    model_name = args.model or (cfg.model if cfg else "garch")
    opts = dict(cfg.model_options) if cfg else {}
    if args.K:
        opts["K"] = args.K
    if args.covariates:
        opts["covariates"] = args.covariates
    shell = ExperimentConfig(DgpSpec(SvLeverage(), T=len(y) + 1), model=model_name, model_options=opts,
                             update_rules=(args.rule,), n0=len(y))
    model = build_model(shell, y, x)
    x_sel = select_covariates(x, opts.get("covariates", ())) if model_name == "bnn" else None
    return shell, model, x_sel


def cmd_fit(args) -> int:
    y, x = _load(args)
    shell, model, x_sel = _model_for_series(args, y, x)
    rule = ScoringRule.parse(args.rule).resolve(y)
    cfg = VbConfig(iterations=args.iterations, w=args.w, seed=args.seed or 0)
    res = calibrate(model, rule, y, cfg, x=x_sel)
    os.makedirs(args.out, exist_ok=True)
    fit = {"model": model.describe(), "rule": rule.name, "threshold": rule.threshold,
           "lambda": res.lam, "n_skipped": res.n_skipped, "w": args.w}
    with open(os.path.join(args.out, "fit.json"), "w") as fh:
        json.dump(_jsonable(fit), fh, indent=2)
    with open(os.path.join(args.out, "elbo.csv"), "w") as fh:
        fh.write("iteration,elbo\n")
        for i, v in enumerate(res.elbo_trace):
            fh.write(f"{i},{v!r}\n")
    write_manifest(args.out, "fit", args, {"vb_config": vars(cfg)})
    print(f"{model.name}/{rule.name}: mu = {np.array2string(res.lam.mu, precision=4)}")
    return 0


def cmd_predict(args) -> int:
    y, x = _load(args)
    with open(args.fit) as fh:
        fit = json.load(fh)
    args.model = args.model or fit["model"]["name"]
    if args.model == "mixture" and not args.K:
        args.K = fit["model"]["K"]
    args.rule = fit["rule"]
    if args.model == "bnn" and args.covariates is None:
        args.covariates = [f"x{i + 1}" for i in range(fit["model"]["inputs"] - 1)] or None
    _, model, x_sel = _model_for_series(args, y, x)
    if x_sel is not None:
        raise ValueError("prediction with covariates needs the covariates of the next period; "
                         "append them as a final row and use the evaluate command")
    lam = VariationalParams(fit["lambda"]["mu"], fit["lambda"]["d"])
    ens = estimate_gvp_predictive(lam, model, y, None, M=args.M, seed=args.seed)
    levels = [args.alpha / 2.0, 0.5, 1.0 - args.alpha / 2.0]
    out = {"mean": ens.mean(), "quantiles": {str(a): ens.quantile(a) for a in levels}, "M": args.M}
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "prediction.json"), "w") as fh:
        json.dump(out, fh, indent=2)
    write_manifest(args.out, "predict", args, {})
    print(json.dumps(out, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "engine": args.engine})
    data = None
    if args.series:
        data = _load(args)
    os.makedirs(args.out, exist_ok=True)
    results = rolling_evaluate(cfg, data, workers=args.workers)
    summary, n_failed = _write_matrices(args.out, "evaluate", cfg, results)
    write_manifest(args.out, "evaluate", args, {"config": cfg.echo(), "results": summary})
    return 2 if n_failed else 0


def _header(path):
    with open(path) as fh:
        return [h.strip() for h in fh.readline().split(",")]


def cmd_replicate(args) -> int:
    configs = replicate_configs(args.target, args.scale, args.seed or 0, args.engine, args.dgp)
    os.makedirs(args.out, exist_ok=True)
    summaries = {}
    n_failed = 0
    for name, cfg in configs.items():
        results = rolling_evaluate(cfg, workers=args.workers)
        s, f = _write_matrices(args.out, name, cfg, results)
        summaries[name] = {"config": cfg.echo(), "results": s}
        n_failed += f
    write_manifest(args.out, "replicate", args, {"runs": summaries})
    return 2 if n_failed else 0


def cmd_pipeline(args) -> int:
    y, _ = load_series(args.series, args.column)
    res = interval_forecast(y, d=args.d, alpha=args.alpha, K=args.K, n_draws=args.draws,
                            iterations=args.iterations, seed=args.seed or 0, holdout=args.holdout)
    out = {"lower": res.lower, "upper": res.upper, "median": res.median, "alpha": res.alpha,
           "d": args.d, "K": args.K}
    if res.holdout is not None:
        out.update(holdout=res.holdout, msis=res.holdout_msis)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "interval.json"), "w") as fh:
        json.dump(out, fh, indent=2)
    write_manifest(args.out, "pipeline", args, {"lambda": res.lam})
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gvp", description="Scoring-rule based Bayesian forecasting")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--out", default="gvp-out")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="simulate a series from a data generating process")
    common(sp)
    sp.add_argument("--dgp", default="sv-leverage", choices=sorted(["garch", "sv-leverage", "sv-smooth",
                                                                     "lstar", "dynreg"]))
    sp.add_argument("--T", type=int, default=3000)
    sp.set_defaults(func=cmd_simulate)

    for name, func in (("fit", cmd_fit), ("predict", cmd_predict)):
        sp = sub.add_parser(name, help=f"{name} a model on a CSV series")
        common(sp)
        sp.add_argument("--series", required=True)
        sp.add_argument("--column", default="y")
        sp.add_argument("--covariates", nargs="*")
        sp.add_argument("--model", choices=["garch", "mixture", "bnn"])
        sp.add_argument("--K", type=int)
        if name == "fit":
            sp.add_argument("--rule", default="LS")
            sp.add_argument("--iterations", type=int, default=10000)
            sp.add_argument("--w", type=float, default=1.0)
        else:
            sp.add_argument("--fit", required=True, help="fit.json written by the fit command")
            sp.add_argument("--M", type=int, default=1000)
            sp.add_argument("--alpha", type=float, default=0.05)
        sp.set_defaults(func=func)

    sp = sub.add_parser("evaluate", help="rolling out-of-sample evaluation from a config file")
    common(sp, config_required=True)
    sp.add_argument("--series", help="CSV series instead of simulating the configured process")
    sp.add_argument("--column", default="y")
    sp.add_argument("--engine", choices=["vb", "mcmc", "both"])
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("replicate", help="run one of the predefined simulation studies")
    common(sp)
    sp.add_argument("target", choices=["toy-garch", "lstar-mixture", "bnn-models"])
    sp.add_argument("--scale", choices=["paper", "desk"], default="desk")
    sp.add_argument("--engine", choices=["vb", "mcmc", "both"])
    sp.add_argument("--dgp", choices=sorted(TOY_DGPS), default="sv-leverage",
                    help="true process for toy-garch")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_replicate)

    sp = sub.add_parser("pipeline", help="interval forecast for the next value of a series")
    common(sp)
    sp.add_argument("--series", required=True)
    sp.add_argument("--column", default="y")
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--K", type=int, default=5)
    sp.add_argument("--draws", type=int, default=5000)
    sp.add_argument("--iterations", type=int, default=2000)
    sp.add_argument("--holdout", action="store_true", help="withhold and score the last observation")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SeriesFormatError, OSError, ValueError, ArithmeticError) as exc:
        print(f"gvp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
