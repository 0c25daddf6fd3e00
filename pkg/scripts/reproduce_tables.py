#!/usr/bin/env python3
"""Run the full table pipeline on one dataset: empirical comparison, network comparison,
binned curves on a half split, lambda sweep."""

from dataclasses import replace
from pathlib import Path

from regpinn.base import setup_logging
from regpinn.dataio import BinSpec, read_dataset
from regpinn.evaluate import (
    DEFAULT_LAMBDAS,
    DEFAULT_PROTOCOLS,
    binned_frame,
    comparison_table,
    format_table,
    lambda_sweep,
    sweep_frame,
    table_frame,
    write_frame,
)
from regpinn.fit import FitProblem, McmcConfig, least_squares_fit, mcmc_sample
from regpinn.models import OverfitForm, ShueForm, overfit_model
from regpinn.nn import PenaltyKind
from regpinn.train import TrainConfig

OUT_DIR = Path(__file__).parent.parent / "data" / "tables"

PENALTY_STRENGTH = 1e-4

PENALTIES = {
    "l1": PenaltyKind("l1", PENALTY_STRENGTH),
    "l2": PenaltyKind("l2", PENALTY_STRENGTH),
    "elastic": PenaltyKind("elastic", PENALTY_STRENGTH, 0.5),
}


def empirical_table(records, seed: int):
    """Baseline, published overfit form, least-squares refit and MCMC refit on every record."""
    print("Fitting overfit form by least squares...")
    refit = least_squares_fit(FitProblem.create(records, OverfitForm())).model()
    print("Sampling Shue form by MCMC...")
    sampled = mcmc_sample(FitProblem.create(records, ShueForm()), McmcConfig(seed=seed)).model()
    models = {"overfit": overfit_model(), refit.model_id: refit, sampled.model_id: sampled}
    return comparison_table(records, models, protocols=[None], seed=seed, region=BinSpec())


def network_entries(seed: int) -> dict[str, TrainConfig]:
    """Vanilla and regularized networks, each bare and with every weight penalty."""
    vanilla = TrainConfig(lam=0.0, regularizer=None, seed=seed)
    shue = TrainConfig(seed=seed)
    entries = {
        "nn": vanilla,
        "regpinn-shue": shue,
        "regpinn-overfit": replace(shue, regularizer=overfit_model()),
    }
    for name, penalty in PENALTIES.items():
        entries[f"nn-{name}"] = replace(vanilla, penalty=penalty)
        entries[f"regpinn-shue-{name}"] = replace(shue, penalty=penalty)
    return entries


def network_table(records, seed: int):
    """Every network entry under both split protocols, with the in-range column."""
    return comparison_table(records, network_entries(seed), protocols=DEFAULT_PROTOCOLS, seed=seed, region=BinSpec())


def binned_curves(records, seed: int):
    """theta / Dp / Bz binned RMSE of every model on a 50% masked split."""
    models = {"overfit": overfit_model(), **network_entries(seed)}
    return comparison_table(records, models, protocols=[0.5], seed=seed, binned=True)


if __name__ == "__main__":
    import sys

    if len(sys.argv) < 2:
        print("usage: reproduce_tables.py DATASET.csv [SEED]")
        sys.exit(2)
    setup_logging()
    dataset = Path(sys.argv[1])
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    records = read_dataset(dataset)
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    print(f"Loaded {len(records)} records from {dataset}")

    print("\n--- EMPIRICAL MODELS ---")
    table = empirical_table(records, seed)
    print(format_table(table))
    write_frame(table_frame(table), OUT_DIR / "empirical.csv")

    print("\n--- NETWORKS ---")
    table = network_table(records, seed)
    print(format_table(table))
    write_frame(table_frame(table), OUT_DIR / "networks.csv")

    print("\n--- BINNED RMSE (50% masked) ---")
    table = binned_curves(records, seed)
    print(format_table(table))
    write_frame(binned_frame(table), OUT_DIR / "binned.csv")

    print("\n--- LAMBDA SWEEP ---")
    sweep = lambda_sweep(records, TrainConfig(seed=seed), DEFAULT_LAMBDAS, DEFAULT_PROTOCOLS)
    frame = sweep_frame(sweep)
    print(frame.to_string(index=False))
    write_frame(frame, OUT_DIR / "sweep.csv")

    print(f"\nSaved tables to {OUT_DIR}")
