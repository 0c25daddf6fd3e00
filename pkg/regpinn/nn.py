"""
Feedforward network in plain numpy: tanh hidden layers, linear output,
reverse-mode gradients of the composite loss

    l_total = l_data + lambda * l_reg + penalty(weights)

and RMSProp updates. All arithmetic is float64.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import DataFormatError, DomainError
from .models import ArrayLike

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (3, 27, 81, 27, 9, 1)
ARTIFACT_VERSION = 1
PENALTY_KINDS = ("none", "l1", "l2", "elastic")


@dataclass(frozen=True, eq=False)
class Mlp:
    sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    input_std: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise DomainError("Mlp needs one weight matrix and bias vector per layer transition")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise DomainError(f"layer {k} has weight {w.shape} / bias {b.shape}, expected sizes {self.sizes}")
        if np.any(self.input_std <= 0):
            raise DomainError("input normalization std must be > 0")
        if self.activation != "tanh":
            raise DomainError(f"unsupported activation '{self.activation}'")

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass(frozen=True, eq=False)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass(frozen=True)
class PenaltyKind:
    kind: str = "none"
    strength: float = 0.0
    mix: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in PENALTY_KINDS:
            raise DomainError(f"penalty kind must be one of {PENALTY_KINDS}, got '{self.kind}'")
        if not self.strength >= 0:
            raise DomainError(f"penalty strength must be >= 0, got {self.strength}")
        if not 0.0 <= self.mix <= 1.0:
            raise DomainError(f"elastic mix must be in [0, 1], got {self.mix}")


@dataclass(frozen=True)
class LossBreakdown:
    l_data: float
    l_reg: float
    penalty: float
    l_total: float
    lam: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l_data, self.l_reg, self.penalty, self.l_total))


@dataclass(frozen=True, eq=False)
class RmsPropState:
    accumulators: tuple[np.ndarray, ...]
    decay: float = 0.9
    eps: float = 1e-8
    lr: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise DomainError(f"RMSProp decay must be in (0, 1), got {self.decay}")
        if not self.eps > 0:
            raise DomainError(f"RMSProp epsilon must be > 0, got {self.eps}")
        if not self.lr > 0:
            raise DomainError(f"learning rate must be > 0, got {self.lr}")

    @classmethod
    def create(cls, mlp: Mlp, lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-8) -> "RmsPropState":
        return cls(tuple(np.zeros_like(p) for p in mlp.parameters()), decay, eps, lr)


def mlp_new(sizes: Sequence[int] = DEFAULT_SIZES, seed: int = 0) -> Mlp:
    """Xavier-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or sizes[0] != 3 or sizes[-1] != 1 or any(s < 1 for s in sizes):
        raise DomainError(f"layer sizes must start with 3, end with 1 and be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return Mlp(sizes, tuple(weights), tuple(biases))


def with_normalization(mlp: Mlp, features: np.ndarray) -> Mlp:
    """Freeze per-feature mean/std from a (n, 3) training matrix."""
    features = np.asarray(features, dtype=float)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return replace(mlp, input_mean=mean, input_std=std)


def _check_inputs(inputs: np.ndarray) -> np.ndarray:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != 3:
        raise DomainError(f"inputs must have 3 columns (bz, dp, theta), got shape {inputs.shape}")
    if not np.all(np.isfinite(inputs)):
        raise DomainError("inputs must be finite")
    return inputs


def _forward_pass(mlp: Mlp, inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output column and the activations of every layer (input included)."""
    a = (inputs - mlp.input_mean) / mlp.input_std
    memory = [a]
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        a = z if k == last else np.tanh(z)
        memory.append(a)
    return a[:, 0], memory


def forward(mlp: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Predict r for a batch of (bz, dp, theta) rows."""
    out, _ = _forward_pass(mlp, _check_inputs(inputs))
    return out


def penalty_value_and_grad(mlp: Mlp, penalty: PenaltyKind) -> tuple[float, tuple[np.ndarray, ...]]:
    """Weight penalty and its (sub)gradient; biases are not penalized."""
    if penalty.kind == "none" or penalty.strength == 0:
        return 0.0, tuple(np.zeros_like(w) for w in mlp.weights)
    l1 = sum(float(np.abs(w).sum()) for w in mlp.weights)
    l2 = sum(float((w * w).sum()) for w in mlp.weights)
    if penalty.kind == "l1":
        c1, c2 = 1.0, 0.0
    elif penalty.kind == "l2":
        c1, c2 = 0.0, 1.0
    else:
        c1, c2 = penalty.mix, 1.0 - penalty.mix
    value = penalty.strength * (c1 * l1 + c2 * l2)
    grads = tuple(penalty.strength * (c1 * np.sign(w) + c2 * 2.0 * w) for w in mlp.weights)
    return value, grads


def _losses(out: np.ndarray, targets: np.ndarray, reg_targets: np.ndarray | None, lam: float, pen: float) -> LossBreakdown:
    err = out - targets
    l_data = float(err @ err) / out.size
    l_reg = 0.0
    if reg_targets is not None:
        err_reg = out - reg_targets
        l_reg = float(err_reg @ err_reg) / out.size
    return LossBreakdown(l_data, l_reg, pen, l_data + lam * l_reg + pen, lam)


def _check_batch(inputs: np.ndarray, targets: np.ndarray, reg_targets: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    inputs = _check_inputs(inputs)
    targets = np.asarray(targets, dtype=float).ravel()
    m = inputs.shape[0]
    if m == 0:
        raise DomainError("batch must contain at least one row")
    if targets.shape != (m,):
        raise DomainError(f"targets length {targets.size} does not match batch length {m}")
    if reg_targets is not None:
        reg_targets = np.asarray(reg_targets, dtype=float).ravel()
        if reg_targets.shape != (m,):
            raise DomainError(f"reg_targets length {reg_targets.size} does not match batch length {m}")
    return inputs, targets, reg_targets


def loss_breakdown(
    mlp: Mlp,
    inputs: np.ndarray,
    targets: np.ndarray,
    reg_targets: np.ndarray | None = None,
    lam: float = 0.0,
    penalty: PenaltyKind = PenaltyKind(),
) -> LossBreakdown:
    """Forward-only loss evaluation."""
    inputs, targets, reg_targets = _check_batch(inputs, targets, reg_targets)
    out, _ = _forward_pass(mlp, inputs)
    pen, _ = penalty_value_and_grad(mlp, penalty)
    return _losses(out, targets, reg_targets, lam, pen)


def loss_and_gradients(
    mlp: Mlp,
    inputs: np.ndarray,
    targets: np.ndarray,
    reg_targets: np.ndarray | None = None,
    lam: float = 0.0,
    penalty: PenaltyKind = PenaltyKind(),
) -> tuple[LossBreakdown, Gradients]:
    """Composite loss and its gradient with respect to every weight and bias.

    reg_targets=None drops the regression term entirely.
    """
    inputs, targets, reg_targets = _check_batch(inputs, targets, reg_targets)
    m = inputs.shape[0]
    out, memory = _forward_pass(mlp, inputs)
    pen, pen_grads = penalty_value_and_grad(mlp, penalty)
    losses = _losses(out, targets, reg_targets, lam, pen)

    d_out = (2.0 / m) * (out - targets)
    if reg_targets is not None:
        d_out = d_out + lam * (2.0 / m) * (out - reg_targets)
    delta = d_out[:, None]

    n_layers = len(mlp.weights)
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for k in range(n_layers - 1, -1, -1):
        a_prev = memory[k]
        grad_w[k] = a_prev.T @ delta + pen_grads[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            # memory[k] is tanh output of layer k-1
            delta = (delta @ mlp.weights[k].T) * (1.0 - a_prev * a_prev)
    return losses, Gradients(tuple(grad_w), tuple(grad_b))


def rmsprop_step(mlp: Mlp, state: RmsPropState, grads: Gradients) -> tuple[Mlp, RmsPropState]:
    """acc <- decay*acc + (1-decay)*g^2; param <- param - lr*g/(sqrt(acc)+eps)."""
    params = mlp.parameters()
    g_all = grads.arrays()
    if len(g_all) != len(params) or any(g.shape != p.shape for g, p in zip(g_all, params)):
        raise DomainError("gradient shapes do not match network parameters")
    new_params = []
    new_acc = []
    for p, g, acc in zip(params, g_all, state.accumulators):
        acc = state.decay * acc + (1.0 - state.decay) * g * g
        new_params.append(p - state.lr * g / (np.sqrt(acc) + state.eps))
        new_acc.append(acc)
    n = len(mlp.weights)
    updated = replace(mlp, weights=tuple(new_params[:n]), biases=tuple(new_params[n:]))
    return updated, replace(state, accumulators=tuple(new_acc))


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """A trained network exposed through the same predict_r interface as the empirical forms."""

    mlp: Mlp
    model_id: str = "nn"

    def predict_r(self, bz: ArrayLike, dp: ArrayLike, theta: ArrayLike) -> np.ndarray:
        bz, dp, theta = np.broadcast_arrays(
            np.asarray(bz, dtype=float), np.asarray(dp, dtype=float), np.asarray(theta, dtype=float)
        )
        inputs = np.column_stack([bz.ravel(), dp.ravel(), theta.ravel()])
        return forward(self.mlp, inputs).reshape(bz.shape)


def save_mlp(mlp: Mlp, path: Path | str) -> None:
    """Versioned .npz container; parameters are stored bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(ARTIFACT_VERSION),
        "sizes": np.array(mlp.sizes, dtype=np.int64),
        "activation": np.array(mlp.activation),
        "input_mean": mlp.input_mean,
        "input_std": mlp.input_std,
    }
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_mlp(path: Path | str) -> Mlp:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model artifact not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != ARTIFACT_VERSION:
            raise DataFormatError(f"unsupported artifact version {version}", path)
        sizes = tuple(int(s) for s in data["sizes"])
        n = len(sizes) - 1
        return Mlp(
            sizes=sizes,
            weights=tuple(data[f"w{k}"] for k in range(n)),
            biases=tuple(data[f"b{k}"] for k in range(n)),
            activation=str(data["activation"]),
            input_mean=data["input_mean"],
            input_std=data["input_std"],
        )
