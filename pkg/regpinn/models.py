"""
Closed-form empirical magnetopause models.

The boundary shape is

    r(theta) = r0 * (2 / (1 + cos theta)) ** alpha

with r0 (subsolar standoff, Re) and alpha (tail flaring) driven by IMF Bz (nT)
and solar wind dynamic pressure Dp (nPa). Two parameterizations are provided:

    ShueForm     single tanh in Bz, Dp power law on r0, log(Dp) term on alpha
    OverfitForm  difference of two tanh in Bz, Dp power laws on r0 and alpha

All functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import ClassVar, Protocol, Union, runtime_checkable

import numpy as np
import pandas as pd

from .base import DomainError

logger = logging.getLogger(__name__)

THETA_MAX = math.radians(165.0)

DEFAULT_GRID_BZ = (-18.0, 15.0)
DEFAULT_GRID_DP = (0.5, 18.0)
DEFAULT_GRID_N = 100

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PolarPoint:
    r: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.r) and self.r > 0):
            raise DomainError(f"r must be finite and > 0, got {self.r}")
        if not (0.0 <= self.theta < math.pi):
            raise DomainError(f"theta must be in [0, pi), got {self.theta}")


@dataclass(frozen=True)
class BoundaryParams:
    r0: float
    alpha: float


@dataclass(frozen=True)
class DriverInput:
    bz: float
    dp: float

    def __post_init__(self) -> None:
        _check_drivers(self.bz, self.dp)


class _Form:
    """Shared vector helpers for parameter sets."""

    R0_FIELDS: ClassVar[tuple[str, ...]] = ()
    ALPHA_FIELDS: ClassVar[tuple[str, ...]] = ()
    FORM_ID: ClassVar[str] = ""

    @classmethod
    def coefficient_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))  # type: ignore[arg-type]

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.coefficient_names()], dtype=float)

    @classmethod
    def from_vector(cls, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        names = cls.coefficient_names()
        if values.shape != (len(names),):
            raise ValueError(f"{cls.__name__} expects {len(names)} values, got shape {values.shape}")
        return cls(**{name: float(v) for name, v in zip(names, values)})

    def _check_finite(self) -> None:
        for name, value in asdict(self).items():  # type: ignore[call-overload]
            if not math.isfinite(value):
                raise DomainError(f"{type(self).__name__}.{name} must be finite, got {value}")


@dataclass(frozen=True)
class ShueForm(_Form):
    """Single-tanh parameterization (1998 baseline coefficients)."""

    a0: float = 10.22
    a1: float = 1.29
    a2: float = 0.184
    a3: float = 8.14
    p_r: float = -1.0 / 6.6
    b0: float = 0.58
    b1: float = -0.007
    b2: float = 0.024

    R0_FIELDS: ClassVar[tuple[str, ...]] = ("a0", "a1", "a2", "a3", "p_r")
    ALPHA_FIELDS: ClassVar[tuple[str, ...]] = ("b0", "b1", "b2")
    FORM_ID: ClassVar[str] = "shue"

    def __post_init__(self) -> None:
        self._check_finite()
        if self.p_r >= 0:
            raise DomainError(f"ShueForm.p_r must be < 0, got {self.p_r}")


@dataclass(frozen=True)
class OverfitForm(_Form):
    """Two-tanh refit: r0 rises with Bz, then decays for northward Bz."""

    c0: float = 9.332
    c1: float = 1.308
    c2: float = 0.213
    c3: float = 11.191
    c4: float = 0.568
    c5: float = 0.479
    c6: float = 7.188
    q_r: float = -1.0 / 6.22
    d0: float = 0.493
    d1: float = -3.5e-4
    q_a: float = 1.0 / 11.92

    R0_FIELDS: ClassVar[tuple[str, ...]] = ("c0", "c1", "c2", "c3", "c4", "c5", "c6", "q_r")
    ALPHA_FIELDS: ClassVar[tuple[str, ...]] = ("d0", "d1", "q_a")
    FORM_ID: ClassVar[str] = "overfit"

    def __post_init__(self) -> None:
        self._check_finite()
        if self.q_r >= 0:
            raise DomainError(f"OverfitForm.q_r must be < 0, got {self.q_r}")
        if self.q_a <= 0:
            raise DomainError(f"OverfitForm.q_a must be > 0, got {self.q_a}")


Form = Union[ShueForm, OverfitForm]

FORMS: dict[str, type] = {ShueForm.FORM_ID: ShueForm, OverfitForm.FORM_ID: OverfitForm}


def _check_drivers(bz: ArrayLike, dp: ArrayLike) -> None:
    if not np.all(np.isfinite(bz)):
        raise DomainError("bz must be finite")
    if not np.all(np.isfinite(dp)):
        raise DomainError("dp must be finite")
    if not np.all(np.asarray(dp) > 0):
        raise DomainError("dp must be > 0")


def _check_theta(theta: ArrayLike) -> None:
    theta = np.asarray(theta)
    if not np.all(np.isfinite(theta)):
        raise DomainError("theta must be finite")
    if np.any(theta < 0) or np.any(theta > THETA_MAX):
        raise DomainError(f"theta must be in [0, {THETA_MAX:.6f}] rad (0-165 deg)")


def shue_r0_alpha(bz: ArrayLike, dp: ArrayLike, form: ShueForm) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized standoff and flaring for the single-tanh form."""
    _check_drivers(bz, dp)
    bz = np.asarray(bz, dtype=float)
    dp = np.asarray(dp, dtype=float)
    r0 = (form.a0 + form.a1 * np.tanh(form.a2 * (bz + form.a3))) * dp**form.p_r
    alpha = (form.b0 + form.b1 * bz) * (1.0 + form.b2 * np.log(dp))
    return r0, alpha


def overfit_r0_alpha(bz: ArrayLike, dp: ArrayLike, form: OverfitForm) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized standoff and flaring for the two-tanh form."""
    _check_drivers(bz, dp)
    bz = np.asarray(bz, dtype=float)
    dp = np.asarray(dp, dtype=float)
    bracket = (
        form.c0
        + form.c1 * np.tanh(form.c2 * (bz + form.c3))
        - form.c4 * np.tanh(form.c5 * (bz - form.c6))
    )
    r0 = bracket * dp**form.q_r
    alpha = (form.d0 + form.d1 * bz) * dp**form.q_a
    return r0, alpha


def shue_params(inp: DriverInput, form: ShueForm = ShueForm()) -> BoundaryParams:
    r0, alpha = shue_r0_alpha(inp.bz, inp.dp, form)
    return BoundaryParams(float(r0), float(alpha))


def overfit_params(inp: DriverInput, form: OverfitForm = OverfitForm()) -> BoundaryParams:
    r0, alpha = overfit_r0_alpha(inp.bz, inp.dp, form)
    return BoundaryParams(float(r0), float(alpha))


def boundary_shape(theta: ArrayLike, r0: ArrayLike, alpha: ArrayLike) -> np.ndarray:
    """r = r0 * (2 / (1 + cos theta)) ** alpha, vectorized."""
    _check_theta(theta)
    return np.asarray(r0) * (2.0 / (1.0 + np.cos(theta))) ** np.asarray(alpha)


def boundary_r(theta: float, params: BoundaryParams) -> float:
    return float(boundary_shape(theta, params.r0, params.alpha))


@runtime_checkable
class BoundaryModel(Protocol):
    """Anything that predicts r from (bz, dp, theta): empirical forms or trained networks."""

    model_id: str

    def predict_r(self, bz: ArrayLike, dp: ArrayLike, theta: ArrayLike) -> np.ndarray: ...


@dataclass(frozen=True)
class EmpiricalModel:
    """Model handle around a parameter set."""

    form: Form
    model_id: str = ""

    def __post_init__(self) -> None:
        if not self.model_id:
            object.__setattr__(self, "model_id", self.form.FORM_ID)

    def params(self, bz: ArrayLike, dp: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(self.form, ShueForm):
            return shue_r0_alpha(bz, dp, self.form)
        return overfit_r0_alpha(bz, dp, self.form)

    def predict_r(self, bz: ArrayLike, dp: ArrayLike, theta: ArrayLike) -> np.ndarray:
        r0, alpha = self.params(bz, dp)
        return boundary_shape(theta, r0, alpha)

    def with_form(self, form: Form) -> "EmpiricalModel":
        return replace(self, form=form)


def shue_model() -> EmpiricalModel:
    return EmpiricalModel(ShueForm())


def overfit_model() -> EmpiricalModel:
    return EmpiricalModel(OverfitForm())


def predict_r(model: BoundaryModel, bz: ArrayLike, dp: ArrayLike, theta: ArrayLike) -> np.ndarray:
    """Model-agnostic prediction; scalars in, 0-d array out."""
    return model.predict_r(bz, dp, theta)


@dataclass(frozen=True)
class StandoffGrid:
    """Subsolar standoff over the (Bz, Dp) plane. r0[i, j] is at (bz[i], dp[j])."""

    bz: np.ndarray
    dp: np.ndarray
    r0: np.ndarray
    model_id: str


def standoff_grid(
    model: BoundaryModel,
    bz_range: tuple[float, float] = DEFAULT_GRID_BZ,
    dp_range: tuple[float, float] = DEFAULT_GRID_DP,
    n_bz: int = DEFAULT_GRID_N,
    n_dp: int = DEFAULT_GRID_N,
) -> StandoffGrid:
    """Evaluate the model at theta = 0 on a regular (Bz, Dp) grid."""
    bz_lo, bz_hi = bz_range
    dp_lo, dp_hi = dp_range
    if n_bz < 2 or n_dp < 2:
        raise DomainError(f"grid needs at least 2 nodes per axis, got n_bz={n_bz}, n_dp={n_dp}")
    if not (math.isfinite(bz_lo) and math.isfinite(bz_hi) and bz_lo < bz_hi):
        raise DomainError(f"bz_range must be finite and increasing, got {bz_range}")
    if not (math.isfinite(dp_lo) and math.isfinite(dp_hi) and 0 < dp_lo < dp_hi):
        raise DomainError(f"dp_range must be positive and increasing, got {dp_range}")

    bz = np.linspace(bz_lo, bz_hi, n_bz)
    dp = np.linspace(dp_lo, dp_hi, n_dp)
    bz_mesh, dp_mesh = np.meshgrid(bz, dp, indexing="ij")
    r0 = np.asarray(model.predict_r(bz_mesh.ravel(), dp_mesh.ravel(), np.zeros(bz_mesh.size)))
    return StandoffGrid(bz=bz, dp=dp, r0=r0.reshape(n_bz, n_dp), model_id=model.model_id)


def write_grid(grid: StandoffGrid, path: Path | str) -> Path:
    """Write grid CSV (bz,dp,r0) plus sidecar JSON axis metadata. Returns the sidecar path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bz_mesh, dp_mesh = np.meshgrid(grid.bz, grid.dp, indexing="ij")
    frame = pd.DataFrame({"bz": bz_mesh.ravel(), "dp": dp_mesh.ravel(), "r0": grid.r0.ravel()})
    frame.to_csv(path, index=False, float_format="%.12g")

    meta = {
        "bz_min": float(grid.bz[0]),
        "bz_max": float(grid.bz[-1]),
        "dp_min": float(grid.dp[0]),
        "dp_max": float(grid.dp[-1]),
        "n_bz": int(grid.bz.size),
        "n_dp": int(grid.dp.size),
        "model_id": grid.model_id,
    }
    meta_path = path.with_suffix(".json")
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=4)
    logger.info("Wrote %dx%d grid for %s to %s", grid.bz.size, grid.dp.size, grid.model_id, path)
    return meta_path
