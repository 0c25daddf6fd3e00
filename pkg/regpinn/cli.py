#!/usr/bin/env python3
"""CLI for the magnetopause fitting and regularized-network pipeline."""

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

import pandas as pd

from .base import NumericalError, RegPinnError, load_defaults, load_run_config, setup_logging, write_key_values
from .dataio import (
    BinSpec,
    bin_records,
    count_tail,
    filter_range,
    merge,
    parse_crossings,
    parse_solarwind,
    read_dataset,
    record_arrays,
    synth_generate,
    write_bins,
    write_dataset,
)
from .evaluate import (
    binned_frame,
    comparison_table,
    evaluate,
    format_report,
    format_table,
    lambda_sweep,
    report_frame,
    rmse,
    sweep_frame,
    table_frame,
    write_frame,
)
from .fit import (
    FitProblem,
    McmcConfig,
    least_squares_fit,
    mcmc_sample,
    read_fit_report,
    staged_least_squares_fit,
    write_chain,
    write_fit_report,
)
from .models import FORMS, BoundaryModel, EmpiricalModel, overfit_model, shue_model, standoff_grid, write_grid
from .nn import NetworkModel, PenaltyKind, load_mlp
from .train import STOP_NON_FINITE, TrainConfig, read_indices, train_reg_pinn, train_vanilla, write_run

logger = logging.getLogger(__name__)

# Model specs that are trained per split protocol instead of evaluated as-is
TRAINABLE_SPECS = ("nn", "regpinn-shue", "regpinn-overfit")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _pair(values: list[float], name: str) -> tuple[float, float]:
    if len(values) != 2:
        raise ValueError(f"{name} needs exactly two values lo,hi, got {values}")
    return float(values[0]), float(values[1])


def _echo(cfg: dict[str, Any], out: Path) -> None:
    write_key_values(cfg, out.with_name(out.name + ".config.txt"))


# ----------------------------------------------------------------------
# config -> domain objects
# ----------------------------------------------------------------------
def resolve_model(spec: str) -> BoundaryModel:
    """shue | overfit | fit:<report> | net:<model.npz>"""
    if spec == "shue":
        return shue_model()
    if spec == "overfit":
        return overfit_model()
    if spec.startswith("fit:"):
        path = Path(spec[4:])
        return EmpiricalModel(read_fit_report(path), model_id=path.stem)
    if spec.startswith("net:"):
        path = Path(spec[4:])
        model_id = path.parent.name if path.name == "model.npz" else path.stem
        return NetworkModel(load_mlp(path), model_id=model_id)
    raise ValueError(f"Unknown model spec '{spec}'. Use shue, overfit, fit:<report> or net:<model.npz>")


def bin_spec_from(cfg: dict[str, Any]) -> BinSpec:
    return BinSpec(
        bz_width=cfg["bz_width"],
        bz_stride=cfg["bz_stride"],
        dp_width=cfg["dp_width"],
        dp_stride=cfg["dp_stride"],
        bz_range=(cfg["bz_min"], cfg["bz_max"]),
        dp_range=(cfg["dp_min"], cfg["dp_max"]),
    )


def train_config_from(cfg: dict[str, Any]) -> TrainConfig:
    reg = cfg["reg"]
    return TrainConfig(
        lam=float(cfg["lambda"]),
        eta=float(cfg["eta"]),
        max_epochs=int(cfg["epochs"]),
        epsilon_threshold=float(cfg["epsilon_threshold"]),
        split_fraction=float(cfg["split"]),
        seed=int(cfg["seed"]),
        batch_size=int(cfg["batch_size"]),
        penalty=PenaltyKind(cfg["penalty"], float(cfg["penalty_strength"]), float(cfg["elastic_mix"])),
        regularizer=None if reg == "none" else resolve_model(reg),
        sizes=tuple(int(s) for s in cfg["sizes"]),
        decay=float(cfg["rmsprop_decay"]),
        rms_eps=float(cfg["rmsprop_eps"]),
    )


def _model_entry(spec: str, cfg: dict[str, Any]) -> BoundaryModel | TrainConfig:
    if spec not in TRAINABLE_SPECS:
        return resolve_model(spec)
    base = train_config_from(cfg)
    if spec == "nn":
        return replace(base, lam=0.0, regularizer=None)
    return replace(base, regularizer=resolve_model(spec.split("-", 1)[1]))


def _load_data(cfg: dict[str, Any]):
    if not cfg["dataset"]:
        raise ValueError("No dataset given; pass --data or set 'dataset' in the config file")
    records = read_dataset(cfg["dataset"])
    logger.info("Loaded %d records from %s", len(records), cfg["dataset"])
    return records


def _fit_problem(cfg: dict[str, Any], records) -> FitProblem:
    if cfg["form"] not in FORMS:
        raise ValueError(f"form must be one of {sorted(FORMS)}, got '{cfg['form']}'")
    start = FORMS[cfg["form"]]()
    return FitProblem.create(records, start, free=cfg["free"] or None, bounds_fraction=cfg["bounds_fraction"])


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_ingest(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Merge crossings with solar wind, optionally filter and bin."""
    if not cfg["crossings"] or not cfg["solarwind"]:
        raise ValueError("ingest needs --crossings and --solarwind")
    crossings = parse_crossings(cfg["crossings"])
    solarwind = parse_solarwind(cfg["solarwind"], cfg["fill_values"])
    merged = merge(crossings, solarwind)
    records = merged.records
    n_out_of_range = 0
    spec = bin_spec_from(cfg)
    if cfg["filter_range"]:
        kept = filter_range(records, spec)
        n_out_of_range = len(records) - len(kept)
        records = kept
    else:
        n_tail = count_tail(records)
        if n_tail:
            logger.warning("%d crossings lie past theta_max and will be rejected by every model; use --filter-range", n_tail)

    out = Path(args.out)
    write_dataset(records, out)
    _echo(cfg, out)
    print(f"Read {len(crossings)} crossings and {len(solarwind)} solar-wind samples")
    print(f"Dropped {merged.dropped} unmatched, {n_out_of_range} out of range; kept {len(records)}")
    print(f"Wrote {out}")
    if cfg["bins_out"]:
        bins = bin_records(filter_range(records, spec), spec)
        write_bins(bins, cfg["bins_out"])
        print(f"Wrote {sum(b.count > 0 for b in bins)} non-empty of {len(bins)} bins to {cfg['bins_out']}")
    return 0


def cmd_synth(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Generate a synthetic dataset from an empirical model."""
    model = resolve_model(cfg["model"])
    theta_lo, theta_hi = _pair(cfg["synth_theta_range_deg"], "theta range")
    records = synth_generate(
        model,
        n=int(cfg["synth_n"]),
        noise_sigma=float(cfg["synth_noise"]),
        seed=int(cfg["seed"]),
        bz_dist=_pair(cfg["synth_bz_range"], "bz range"),
        dp_dist=_pair(cfg["synth_dp_range"], "dp range"),
        theta_dist=(math.radians(theta_lo), math.radians(theta_hi)),
    )
    out = Path(args.out)
    if records:
        bz, dp, theta, _ = record_arrays(records)
        truth = model.predict_r(bz, dp, theta)
    else:
        truth = []
    write_dataset(records, out, r_true=truth)
    _echo(cfg, out)
    print(f"Wrote {len(records)} synthetic records from {model.model_id} to {out}")
    return 0


def cmd_fit(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Least-squares fit of an empirical form."""
    records = _load_data(cfg)
    problem = _fit_problem(cfg, records)
    fitter = staged_least_squares_fit if cfg["staged"] else least_squares_fit
    result = fitter(problem, tol=float(cfg["lm_tol"]), max_iters=int(cfg["lm_max_iters"]))
    out = Path(args.out)
    write_fit_report(result.form, out, sse=result.sse, n_iters=result.n_iters, converged=result.converged)
    _echo(cfg, out)
    for name, value in zip(result.form.coefficient_names(), result.form.to_vector()):
        print(f"  {name} = {value:.9g}")
    print(f"sse={result.sse:.6g} (initial {result.initial_sse:.6g}) iterations={result.n_iters} converged={result.converged}")
    print(f"rmse={rmse(result.model(), records):.4f} Re")
    print(f"Wrote {out}")
    return 0


def cmd_mcmc(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Metropolis sampling of an empirical form."""
    records = _load_data(cfg)
    problem = _fit_problem(cfg, records)
    if cfg["mcmc_init"]:
        start = read_fit_report(cfg["mcmc_init"])
        if type(start) is not problem.form_cls:
            raise ValueError(f"--init report holds a {start.FORM_ID} form, expected {cfg['form']}")
        problem = FitProblem.create(records, start, free=list(problem.free_names), bounds=(problem.lower, problem.upper))
    sigma = float(cfg["mcmc_likelihood_sigma"])
    mcmc_cfg = McmcConfig(
        n_steps=int(cfg["mcmc_steps"]),
        burn_in=int(cfg["mcmc_burn_in"]),
        proposal_scale=float(cfg["mcmc_proposal_scale"]),
        seed=int(cfg["seed"]),
        likelihood_sigma=sigma if sigma > 0 else None,
    )
    chain = mcmc_sample(problem, mcmc_cfg)
    out = Path(args.out)
    write_fit_report(chain.form, out, acceptance_rate=chain.acceptance_rate, sse=problem.sse(chain.form.to_vector()))
    _echo(cfg, out)
    if cfg["chain_out"]:
        write_chain(chain, cfg["chain_out"])
        print(f"Wrote chain to {cfg['chain_out']}")
    for name, mean, std in zip(chain.names, chain.mean, chain.std):
        print(f"  {name} = {mean:.9g} +- {std:.3g}")
    print(f"acceptance rate {chain.acceptance_rate:.3f}; rmse={rmse(chain.model(), records):.4f} Re")
    print(f"Wrote {out}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Train one network and write its run directory."""
    records = _load_data(cfg)
    config = train_config_from(cfg)
    result = train_reg_pinn(records, config) if config.regularized else train_vanilla(records, config)
    out_dir = write_run(result, args.out, extra=cfg)
    if result.stop_reason == STOP_NON_FINITE:
        print(f"Training aborted on non-finite loss after {result.epochs_run} epochs", file=sys.stderr)
        return 1
    test = [records[i] for i in result.test_idx]
    print(f"Stopped after {result.epochs_run} epochs ({result.stop_reason})")
    if result.history:
        print(f"final l_total={result.history[-1].l_total:.6g}")
    print(f"masked rmse={rmse(result.model(), test):.4f} Re on {len(test)} records")
    print(f"Wrote {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Evaluate model handles; with --protocols, print a comparison table."""
    records = _load_data(cfg)
    specs = cfg["models"] or ["shue"]
    out = Path(args.out) if args.out else None
    dataset_id = Path(cfg["dataset"]).stem

    if cfg["eval_protocols"]:
        if cfg["test_indices"]:
            raise ValueError("--test-indices evaluates saved runs; it cannot be combined with --protocols")
        protocols = [None if p >= 1.0 else p for p in cfg["eval_protocols"]]
        entries = {spec: _model_entry(spec, cfg) for spec in specs}
        table = comparison_table(
            records,
            entries,
            protocols,
            seed=int(cfg["seed"]),
            region=bin_spec_from(cfg) if cfg["in_range"] else None,
            binned=bool(cfg["binned_out"]),
        )
        print(format_table(table))
        if out:
            write_frame(table_frame(table), out)
        if cfg["binned_out"]:
            write_frame(binned_frame(table), cfg["binned_out"])
            print(f"Wrote binned curves to {cfg['binned_out']}")
    else:
        if cfg["test_indices"]:
            idx = read_indices(cfg["test_indices"], len(records))
            records = [records[i] for i in idx]
            dataset_id = f"{dataset_id} (masked {len(records)})"
        if cfg["in_range"]:
            records = filter_range(records, bin_spec_from(cfg))
            logger.info("Evaluating on %d in-range records", len(records))
        frames = []
        for spec in specs:
            report = evaluate(resolve_model(spec), records, dataset_id=dataset_id)
            print(format_report(report))
            frames.append(report_frame(report))
        if out:
            write_frame(pd.concat(frames, ignore_index=True), out)
        if cfg["binned_out"]:
            write_frame(pd.concat(frames, ignore_index=True), cfg["binned_out"])
            print(f"Wrote binned curves to {cfg['binned_out']}")
    if out:
        _echo(cfg, out)
        print(f"Wrote {out}")
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Masked RMSE over a lambda grid for both split protocols."""
    records = _load_data(cfg)
    base = train_config_from(cfg)
    result = lambda_sweep(records, base, cfg["lambdas"], cfg["protocols"])
    frame = sweep_frame(result)
    print(frame.to_string(index=False))
    out = Path(args.out)
    write_frame(frame, out)
    _echo(cfg, out)
    print(f"Wrote {out}")
    return 0


def cmd_grid(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Standoff grid over (Bz, Dp) for contour plotting."""
    model = resolve_model(cfg["model"])
    grid = standoff_grid(
        model,
        _pair(cfg["grid_bz_range"], "bz range"),
        _pair(cfg["grid_dp_range"], "dp range"),
        int(cfg["grid_n_bz"]),
        int(cfg["grid_n_dp"]),
    )
    out = Path(args.out)
    meta = write_grid(grid, out)
    _echo(cfg, out)
    print(f"Wrote {grid.r0.shape[0]}x{grid.r0.shape[1]} grid to {out} (axes in {meta})")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace, dict[str, Any]], int]] = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "mcmc": cmd_mcmc,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
}


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def _add_data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", dest="dataset", help="Merged or synthetic dataset CSV")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lambda", type=float, help="Weight of the regression loss (default 1)")
    p.add_argument("--eta", type=float, help="RMSProp learning rate (default 1e-3)")
    p.add_argument("--epochs", type=int, help="Maximum epochs K (default 500)")
    p.add_argument("--epsilon-threshold", dest="epsilon_threshold", type=float, help="Stop when l_total <= this (default 0)")
    p.add_argument("--split", type=float, help="Training fraction (default 0.8)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="Mini-batch size (default 256)")
    p.add_argument("--sizes", type=_int_list, help="Layer sizes (default 3,27,81,27,9,1)")
    p.add_argument("--reg", help="Regularizer: none, shue, overfit or fit:<report> (default shue)")
    p.add_argument("--penalty", choices=["none", "l1", "l2", "elastic"], help="Weight penalty (default none)")
    p.add_argument("--penalty-strength", dest="penalty_strength", type=float, help="Penalty strength (default 0)")
    p.add_argument("--elastic-mix", dest="elastic_mix", type=float, help="L1 share of the elastic penalty (default 0.5)")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    _add_data_flag(p)
    p.add_argument("--form", choices=sorted(FORMS), help="Parameter set to fit (default shue)")
    p.add_argument("--free", type=_str_list, help="Comma-separated free coefficients (default all)")
    p.add_argument("--bounds-fraction", dest="bounds_fraction", type=float, help="Bounds +- fraction of published values (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="Seed for every random draw (default 0)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(description="Empirical magnetopause models and regularized network training")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("ingest", parents=[common], help="Merge crossings with 5-minute solar wind")
    p.add_argument("--crossings", help="Crossings CSV")
    p.add_argument("--solarwind", help="Solar-wind CSV")
    p.add_argument("--out", required=True, help="Merged dataset CSV")
    p.add_argument("--filter-range", dest="filter_range", action="store_true", default=None, help="Drop records outside the study range or past theta_max")
    p.add_argument("--fill-value", dest="fill_values", type=_float_list, help="Solar-wind fill values (default 9999.99,99.99)")
    p.add_argument("--bins-out", dest="bins_out", help="Also write (Bz, Dp) bin aggregates to this CSV")
    for key in ("bz_width", "bz_stride", "dp_width", "dp_stride", "bz_min", "bz_max", "dp_min", "dp_max"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, help=f"Bin spec {key}")

    p = subparsers.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--model", help="Generating model spec (default shue)")
    p.add_argument("--n", dest="synth_n", type=int, help="Number of records (default 5000)")
    p.add_argument("--noise", dest="synth_noise", type=float, help="Gaussian noise on r, Re (default 0)")
    p.add_argument("--bz-range", dest="synth_bz_range", type=_float_list, help="lo,hi nT")
    p.add_argument("--dp-range", dest="synth_dp_range", type=_float_list, help="lo,hi nPa")
    p.add_argument("--theta-range", dest="synth_theta_range_deg", type=_float_list, help="lo,hi degrees")
    p.add_argument("--out", required=True, help="Dataset CSV")

    p = subparsers.add_parser("fit", parents=[common], help="Least-squares fit of an empirical form")
    _add_fit_flags(p)
    p.add_argument("--tol", dest="lm_tol", type=float, help="Convergence tolerance (default 1e-10)")
    p.add_argument("--max-iters", dest="lm_max_iters", type=int, help="Iteration cap (default 200)")
    p.add_argument("--staged", action="store_true", default=None, help="Fit r0 coefficients, then alpha coefficients")
    p.add_argument("--out", required=True, help="Fit report")

    p = subparsers.add_parser("mcmc", parents=[common], help="Metropolis sampling of an empirical form")
    _add_fit_flags(p)
    p.add_argument("--steps", dest="mcmc_steps", type=int, help="Chain length (default 20000)")
    p.add_argument("--burn-in", dest="mcmc_burn_in", type=int, help="Discarded steps (default 5000)")
    p.add_argument("--proposal-scale", dest="mcmc_proposal_scale", type=float, help="Proposal sigma relative to |start| (default 0.005)")
    p.add_argument("--likelihood-sigma", dest="mcmc_likelihood_sigma", type=float, help="Observation noise, Re (default: residual std)")
    p.add_argument("--init", dest="mcmc_init", help="Start from the coefficients in this fit report")
    p.add_argument("--out", required=True, help="Posterior-mean report")
    p.add_argument("--chain-out", dest="chain_out", help="Chain CSV")

    p = subparsers.add_parser("train", parents=[common], help="Train a network")
    _add_data_flag(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="Run directory")

    p = subparsers.add_parser("eval", parents=[common], help="RMSE reports and comparison tables")
    _add_data_flag(p)
    _add_train_flags(p)
    p.add_argument("--model", dest="models", action="append", help=f"Model spec, repeatable; {', '.join(TRAINABLE_SPECS)} need --protocols")
    p.add_argument("--protocols", dest="eval_protocols", type=_float_list, help="Training fractions, e.g. 0.8,0.2; 1 means all records")
    p.add_argument("--test-indices", dest="test_indices", help="Evaluate on the masked split saved by train (test_indices.txt)")
    p.add_argument("--in-range", dest="in_range", action="store_true", default=None, help="Restrict to the study range; with --protocols adds an in-range RMSE column")
    p.add_argument("--binned-out", dest="binned_out", help="With --protocols, write theta/Dp/Bz binned RMSE of every cell to this CSV")
    p.add_argument("--out", help="CSV output")

    p = subparsers.add_parser("sweep", parents=[common], help="Lambda sweep")
    _add_data_flag(p)
    _add_train_flags(p)
    p.add_argument("--lambdas", type=_float_list, help="Lambda grid (default 0.1,0.5,1,2,5)")
    p.add_argument("--protocols", type=_float_list, help="Training fractions (default 0.8,0.2)")
    p.add_argument("--out", required=True, help="Sweep CSV")

    p = subparsers.add_parser("grid", parents=[common], help="Standoff grid over (Bz, Dp)")
    p.add_argument("--model", help="Model spec (default shue)")
    p.add_argument("--bz-range", dest="grid_bz_range", type=_float_list, help="lo,hi nT (default -18,15)")
    p.add_argument("--dp-range", dest="grid_dp_range", type=_float_list, help="lo,hi nPa (default 0.5,18)")
    p.add_argument("--n-bz", dest="grid_n_bz", type=int, help="Bz nodes (default 100)")
    p.add_argument("--n-dp", dest="grid_n_dp", type=int, help="Dp nodes (default 100)")
    p.add_argument("--out", required=True, help="Grid CSV")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    keys = load_defaults().keys()
    overrides = {key: value for key, value in vars(args).items() if key in keys}

    try:
        cfg = load_run_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RegPinnError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
