import numpy as np
import pandas as pd
import pytest

from regpinn.base import DataFormatError, DomainError
from regpinn.dataio import record_arrays, synth_generate
from regpinn.evaluate import rmse
from regpinn.models import shue_model
from regpinn.nn import LossBreakdown, PenaltyKind, load_mlp, loss_breakdown, mlp_new, with_normalization
from regpinn import train as train_module
from regpinn.train import (
    STOP_MAX_EPOCHS,
    STOP_NON_FINITE,
    STOP_THRESHOLD,
    TrainConfig,
    read_indices,
    split,
    train_reg_pinn,
    train_vanilla,
    write_run,
)

SMALL = (3, 8, 4, 1)


def small_config(**kwargs):
    defaults = dict(max_epochs=5, sizes=SMALL, batch_size=64, eta=1e-2)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def test_split_sizes_and_determinism():
    train_idx, test_idx = split(10, 0.8, seed=3)
    assert train_idx.size == 8 and test_idx.size == 2
    assert sorted(np.concatenate([train_idx, test_idx]).tolist()) == list(range(10))
    again, _ = split(10, 0.8, seed=3)
    np.testing.assert_array_equal(train_idx, again)

    train_idx, test_idx = split(5, 0.2, seed=0)
    assert train_idx.size == 1 and test_idx.size == 4


@pytest.mark.parametrize("n,fraction", [(1, 0.5), (10, 0.0), (10, 1.0), (3, 0.999)])
def test_split_rejects_degenerate(n, fraction):
    with pytest.raises(DomainError):
        split(n, fraction, seed=0)


def test_train_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(lam=-1.0)
    with pytest.raises(DomainError):
        TrainConfig(eta=0.0)
    with pytest.raises(DomainError):
        TrainConfig(max_epochs=0)
    with pytest.raises(DomainError):
        TrainConfig(split_fraction=1.0)
    assert TrainConfig().regularized
    assert not TrainConfig(lam=0.0).regularized
    assert not TrainConfig(regularizer=None).regularized


def test_train_config_echo_uses_config_keys():
    echo = TrainConfig(lam=2.0, sizes=SMALL).echo()
    assert echo["lambda"] == 2.0
    assert echo["sizes"] == [3, 8, 4, 1]
    assert echo["reg"] == "shue"


def test_training_runs_all_epochs(shue_records):
    result = train_reg_pinn(shue_records, small_config())
    assert result.stop_reason == STOP_MAX_EPOCHS
    assert result.epochs_run == 5
    assert len(result.history) == len(result.test_history) == 5
    assert result.train_idx.size == 320 and result.test_idx.size == 80
    assert all(h.l_reg > 0 and h.lam == 1.0 for h in result.history)


def test_training_reduces_loss(shue_records):
    config = small_config(max_epochs=150, lam=1.0)
    result = train_reg_pinn(shue_records, config)

    inputs = np.column_stack(record_arrays(shue_records)[:3])
    _, _, _, r = record_arrays(shue_records)
    start = with_normalization(mlp_new(config.sizes, config.seed), inputs[result.train_idx])
    initial = loss_breakdown(start, inputs[result.train_idx], r[result.train_idx])
    assert result.history[-1].l_data < 0.5 * initial.l_data


def test_threshold_stop(shue_records):
    result = train_reg_pinn(shue_records, small_config(epsilon_threshold=1e12))
    assert result.stop_reason == STOP_THRESHOLD
    assert result.epochs_run == 1


def test_non_finite_loss_aborts_with_last_finite_parameters(shue_records, monkeypatch):
    calls = {"n": 0}
    real = train_module.loss_breakdown

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 5:
            return LossBreakdown(float("nan"), 0.0, 0.0, float("nan"), 1.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(train_module, "loss_breakdown", flaky)
    result = train_reg_pinn(shue_records, small_config(max_epochs=10))
    assert result.stop_reason == STOP_NON_FINITE
    # two calls per finished epoch: train split then masked split
    assert result.epochs_run == 2

    monkeypatch.setattr(train_module, "loss_breakdown", real)
    reference = train_reg_pinn(shue_records, small_config(max_epochs=2))
    for a, b in zip(result.mlp.parameters(), reference.mlp.parameters()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lambda_zero_matches_vanilla_bit_for_bit(shue_records, seed):
    reg = train_reg_pinn(shue_records, small_config(lam=0.0, seed=seed))
    vanilla = train_vanilla(shue_records, small_config(seed=seed))
    for a, b in zip(reg.mlp.parameters(), vanilla.mlp.parameters()):
        np.testing.assert_array_equal(a, b)
    assert reg.history == vanilla.history
    assert all(h.l_reg == 0.0 for h in vanilla.history)


def test_regularized_total_stays_above_vanilla_data_loss(noisy_records):
    config = small_config(max_epochs=20, lam=1.0, seed=4)
    reg = train_reg_pinn(noisy_records, config)
    vanilla = train_vanilla(noisy_records, config)
    assert len(reg.history) == len(vanilla.history) == 20
    for h_reg, h_van in zip(reg.history, vanilla.history):
        assert h_reg.l_total >= h_van.l_data - 1e-6


def test_regularizer_sees_inputs_only(noisy_records):
    class Recorder:
        model_id = "recorder"

        def __init__(self):
            self.calls = []

        def predict_r(self, bz, dp, theta):
            self.calls.append((bz, dp, theta))
            return shue_model().predict_r(bz, dp, theta)

    recorder = Recorder()
    train_reg_pinn(noisy_records, small_config(max_epochs=2, regularizer=recorder))
    bz, dp, theta, _ = record_arrays(noisy_records)
    assert len(recorder.calls) == 1
    for got, expected in zip(recorder.calls[0], (bz, dp, theta)):
        np.testing.assert_array_equal(got, expected)


def test_penalty_is_reported(shue_records):
    result = train_reg_pinn(shue_records, small_config(max_epochs=2, penalty=PenaltyKind("l2", 1e-3)))
    assert all(h.penalty > 0 for h in result.history)
    for h in result.history:
        assert h.l_total == pytest.approx(h.l_data + h.lam * h.l_reg + h.penalty)


def test_write_run(tmp_path, shue_records):
    result = train_reg_pinn(shue_records, small_config(max_epochs=3))
    out = write_run(result, tmp_path / "run", extra={"dataset": "synthetic.csv"})

    for name in ("config.txt", "losses.csv", "test_losses.csv", "model.npz", "train_indices.txt", "test_indices.txt"):
        assert (out / name).exists()
    losses = pd.read_csv(out / "losses.csv")
    assert list(losses.columns) == ["epoch", "l_data", "l_reg", "penalty", "l_total"]
    assert losses["epoch"].tolist() == [1, 2, 3]
    assert "dataset = synthetic.csv" in (out / "config.txt").read_text()
    np.testing.assert_array_equal(np.loadtxt(out / "test_indices.txt", dtype=int), result.test_idx)

    loaded = load_mlp(out / "model.npz")
    for a, b in zip(loaded.parameters(), result.mlp.parameters()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(read_indices(out / "test_indices.txt", len(shue_records)), result.test_idx)


def test_read_indices_checks_range(tmp_path):
    path = tmp_path / "test_indices.txt"
    path.write_text("0\n3\n7\n")
    np.testing.assert_array_equal(read_indices(path, 8), [0, 3, 7])
    with pytest.raises(DataFormatError, match="indices"):
        read_indices(path, 5)
    path.write_text("1\nx\n")
    with pytest.raises(DataFormatError):
        read_indices(path, 5)
    with pytest.raises(FileNotFoundError):
        read_indices(tmp_path / "missing.txt", 5)


@pytest.mark.slow
def test_end_to_end_learning_on_noiseless_data():
    records = synth_generate(shue_model(), n=5000, seed=0)
    result = train_reg_pinn(records, TrainConfig(lam=1.0, max_epochs=500, split_fraction=0.8, seed=0))
    test = [records[i] for i in result.test_idx]
    assert rmse(result.model(), test) < 0.15


@pytest.mark.slow
def test_regularizer_pulls_towards_model_on_noisy_data():
    records = synth_generate(shue_model(), n=2000, noise_sigma=0.5, seed=3)
    config = TrainConfig(max_epochs=200, split_fraction=0.8, seed=0)
    reg = train_reg_pinn(records, config)
    vanilla = train_vanilla(records, config)
    test = [records[i] for i in reg.test_idx]
    assert rmse(reg.model(), test) <= rmse(vanilla.model(), test) + 0.05
