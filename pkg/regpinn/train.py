"""
Training loop for the vanilla network and the regression-regularized network.

Each epoch shuffles the training split, takes mini-batch RMSProp steps on
l_total, then recomputes the full-split loss; training stops when that loss
drops to epsilon_threshold or after max_epochs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .base import DataFormatError, DomainError, write_key_values
from .dataio import CrossingRecord, record_arrays
from .models import EmpiricalModel, shue_model
from .nn import (
    DEFAULT_SIZES,
    LossBreakdown,
    Mlp,
    NetworkModel,
    PenaltyKind,
    RmsPropState,
    loss_and_gradients,
    loss_breakdown,
    mlp_new,
    rmsprop_step,
    save_mlp,
    with_normalization,
)

logger = logging.getLogger(__name__)

STOP_THRESHOLD = "threshold"
STOP_MAX_EPOCHS = "max_epochs"
STOP_NON_FINITE = "non_finite"

LOSS_COLUMNS = ["epoch", "l_data", "l_reg", "penalty", "l_total"]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    eta: float = 1e-3
    max_epochs: int = 500
    epsilon_threshold: float = 0.0
    split_fraction: float = 0.8
    seed: int = 0
    batch_size: int = 256
    penalty: PenaltyKind = PenaltyKind()
    regularizer: EmpiricalModel | None = field(default_factory=shue_model)
    sizes: tuple[int, ...] = DEFAULT_SIZES
    decay: float = 0.9
    rms_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not self.eta > 0:
            raise DomainError(f"learning rate must be > 0, got {self.eta}")
        if self.max_epochs < 1:
            raise DomainError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.epsilon_threshold >= 0:
            raise DomainError(f"epsilon_threshold must be >= 0, got {self.epsilon_threshold}")
        if not 0.0 < self.split_fraction < 1.0:
            raise DomainError(f"split fraction must be in (0, 1), got {self.split_fraction}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def regularized(self) -> bool:
        return self.lam > 0 and self.regularizer is not None

    def echo(self) -> dict[str, Any]:
        """Flat key-values in run-config vocabulary."""
        return {
            "lambda": self.lam,
            "eta": self.eta,
            "epochs": self.max_epochs,
            "epsilon_threshold": self.epsilon_threshold,
            "split": self.split_fraction,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "sizes": list(self.sizes),
            "rmsprop_decay": self.decay,
            "rmsprop_eps": self.rms_eps,
            "penalty": self.penalty.kind,
            "penalty_strength": self.penalty.strength,
            "elastic_mix": self.penalty.mix,
            "reg": "none" if self.regularizer is None else self.regularizer.model_id,
        }


@dataclass(frozen=True, eq=False)
class TrainResult:
    mlp: Mlp
    history: list[LossBreakdown]
    test_history: list[LossBreakdown]
    epochs_run: int
    stop_reason: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    config: TrainConfig

    def model(self, model_id: str = "nn") -> NetworkModel:
        return NetworkModel(self.mlp, model_id)


def split(n_or_records: int | Sequence[CrossingRecord], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the first ceil(fraction * n) indices train, the rest are masked."""
    n = n_or_records if isinstance(n_or_records, int) else len(n_or_records)
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"split fraction must be in (0, 1), got {fraction}")
    if n < 2:
        raise DomainError(f"need at least 2 records to split, got {n}")
    n_train = math.ceil(fraction * n - 1e-9)
    if not 0 < n_train < n:
        raise DomainError(f"fraction {fraction} of {n} records leaves an empty split")
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _features(records: Sequence[CrossingRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    bz, dp, theta, r = record_arrays(records)
    return np.column_stack([bz, dp, theta]), r, bz, dp, theta


def train_reg_pinn(records: Sequence[CrossingRecord], config: TrainConfig) -> TrainResult:
    """Train with l_total = l_data + lambda * l_reg + penalty."""
    inputs, r, bz, dp, theta = _features(records)
    train_idx, test_idx = split(len(records), config.split_fraction, config.seed)

    mlp = with_normalization(mlp_new(config.sizes, config.seed), inputs[train_idx])
    state = RmsPropState.create(mlp, config.eta, config.decay, config.rms_eps)

    reg = None
    if config.regularized:
        # inputs only, never observed r
        reg = np.asarray(config.regularizer.predict_r(bz, dp, theta), dtype=float)  # type: ignore[union-attr]
    reg_train = None if reg is None else reg[train_idx]
    reg_test = None if reg is None else reg[test_idx]
    lam = config.lam if reg is not None else 0.0

    rng = np.random.default_rng([config.seed, 1])
    history: list[LossBreakdown] = []
    test_history: list[LossBreakdown] = []
    stop_reason = STOP_MAX_EPOCHS

    for epoch in range(1, config.max_epochs + 1):
        previous = mlp, state
        order = rng.permutation(train_idx.size)
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            rows = train_idx[batch]
            _, grads = loss_and_gradients(
                mlp, inputs[rows], r[rows], None if reg_train is None else reg_train[batch], lam, config.penalty
            )
            mlp, state = rmsprop_step(mlp, state, grads)

        losses = loss_breakdown(mlp, inputs[train_idx], r[train_idx], reg_train, lam, config.penalty)
        if not losses.is_finite():
            logger.error("Non-finite loss at epoch %d; aborting with %d finite epochs", epoch, len(history))
            mlp, state = previous
            stop_reason = STOP_NON_FINITE
            break
        history.append(losses)
        test_history.append(loss_breakdown(mlp, inputs[test_idx], r[test_idx], reg_test, lam, config.penalty))
        logger.debug(
            "epoch %d: l_data=%.6g l_reg=%.6g penalty=%.6g l_total=%.6g",
            epoch, losses.l_data, losses.l_reg, losses.penalty, losses.l_total,
        )
        if losses.l_total <= config.epsilon_threshold:
            stop_reason = STOP_THRESHOLD
            break

    logger.info("Training stopped after %d epochs (%s)", len(history), stop_reason)
    return TrainResult(mlp, history, test_history, len(history), stop_reason, train_idx, test_idx, config)


def train_vanilla(records: Sequence[CrossingRecord], config: TrainConfig) -> TrainResult:
    """Data loss only: the same loop with the regression term absent."""
    return train_reg_pinn(records, replace(config, lam=0.0, regularizer=None))


def _loss_frame(history: Sequence[LossBreakdown]) -> pd.DataFrame:
    return pd.DataFrame(
        [(i + 1, h.l_data, h.l_reg, h.penalty, h.l_total) for i, h in enumerate(history)],
        columns=LOSS_COLUMNS,
    )


def write_run(result: TrainResult, out_dir: Path | str, extra: dict[str, Any] | None = None) -> Path:
    """Write config echo, loss curves, model artifact and split indices into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = result.config.echo()
    echo.update(extra or {})
    write_key_values(echo, out_dir / "config.txt")
    _loss_frame(result.history).to_csv(out_dir / "losses.csv", index=False, float_format="%.12g")
    _loss_frame(result.test_history).to_csv(out_dir / "test_losses.csv", index=False, float_format="%.12g")
    save_mlp(result.mlp, out_dir / "model.npz")
    np.savetxt(out_dir / "train_indices.txt", result.train_idx, fmt="%d")
    np.savetxt(out_dir / "test_indices.txt", result.test_idx, fmt="%d")
    logger.info("Wrote training run to %s", out_dir)
    return out_dir


def read_indices(path: Path | str, n_records: int) -> np.ndarray:
    """Read train_indices.txt / test_indices.txt written by write_run."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Index file not found: {path}")
    try:
        idx = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as e:
        raise DataFormatError(f"expected one integer index per line ({e})", path) from e
    if idx.size == 0:
        raise DataFormatError("index file is empty", path)
    if idx.min() < 0 or idx.max() >= n_records:
        raise DataFormatError(f"indices must lie in [0, {n_records}); is this the run's dataset?", path)
    return idx
