import json
import math

import numpy as np
import pandas as pd
import pytest

from regpinn.base import DomainError
from regpinn.models import (
    FORMS,
    THETA_MAX,
    BoundaryModel,
    BoundaryParams,
    DriverInput,
    EmpiricalModel,
    OverfitForm,
    PolarPoint,
    ShueForm,
    boundary_r,
    boundary_shape,
    overfit_model,
    overfit_params,
    predict_r,
    shue_model,
    shue_params,
    standoff_grid,
    write_grid,
)

# (bz, dp) points spanning the study range, corners included
DRIVER_POINTS = [
    (0.0, 1.0), (0.0, 2.0), (-18.0, 8.5), (15.0, 0.5), (-18.0, 0.5),
    (15.0, 8.5), (-5.0, 3.0), (5.0, 1.5), (-10.0, 6.0), (2.5, 4.2), (-1.0, 0.8),
]


def shue_by_hand(bz, dp):
    r0 = (10.22 + 1.29 * math.tanh(0.184 * (bz + 8.14))) * dp ** (-1.0 / 6.6)
    alpha = (0.58 - 0.007 * bz) * (1.0 + 0.024 * math.log(dp))
    return r0, alpha


def overfit_by_hand(bz, dp):
    bracket = 9.332 + 1.308 * math.tanh(0.213 * (bz + 11.191)) - 0.568 * math.tanh(0.479 * (bz - 7.188))
    return bracket * dp ** (-1.0 / 6.22), (0.493 - 3.5e-4 * bz) * dp ** (1.0 / 11.92)


@pytest.mark.parametrize("bz,dp", DRIVER_POINTS)
def test_shue_params_match_hand_evaluation(bz, dp):
    params = shue_params(DriverInput(bz, dp))
    r0, alpha = shue_by_hand(bz, dp)
    assert params.r0 == pytest.approx(r0, rel=1e-9)
    assert params.alpha == pytest.approx(alpha, rel=1e-9)
    assert math.isfinite(params.r0) and math.isfinite(params.alpha)


@pytest.mark.parametrize("bz,dp", DRIVER_POINTS)
def test_overfit_params_match_hand_evaluation(bz, dp):
    params = overfit_params(DriverInput(bz, dp))
    r0, alpha = overfit_by_hand(bz, dp)
    assert params.r0 == pytest.approx(r0, rel=1e-9)
    assert params.alpha == pytest.approx(alpha, rel=1e-9)


def test_shue_pinned_points():
    unit = shue_params(DriverInput(0.0, 1.0))
    assert unit.r0 == pytest.approx(11.387118, rel=1e-6)
    assert unit.alpha == pytest.approx(0.58)

    doubled = shue_params(DriverInput(0.0, 2.0))
    assert doubled.r0 == pytest.approx(10.252, rel=1e-4)
    assert doubled.alpha == pytest.approx(0.5896, rel=1e-4)


def test_higher_pressure_compresses_standoff():
    dps = [0.5, 1.0, 2.0, 4.0, 8.5]
    r0s = [shue_params(DriverInput(-3.0, dp)).r0 for dp in dps]
    assert all(a > b for a, b in zip(r0s, r0s[1:]))


def test_overfit_r0_peaks_between_tanh_centres():
    bz = np.linspace(-18, 15, 331)
    r0, _ = overfit_model().params(bz, np.full_like(bz, 2.0))
    peak = bz[np.argmax(r0)]
    assert -11.191 < peak < 7.188
    assert r0[-1] < r0.max()


def test_boundary_shape_subsolar_and_dawn_dusk():
    assert float(boundary_shape(0.0, 10.0, 0.6)) == pytest.approx(10.0)
    params = shue_params(DriverInput(0.0, 2.0))
    assert boundary_r(math.pi / 2, params) == pytest.approx(params.r0 * 2**params.alpha)
    assert boundary_r(math.pi / 2, params) == pytest.approx(15.43, rel=1e-3)


def test_boundary_shape_rejects_theta_outside_range():
    with pytest.raises(DomainError, match="theta"):
        boundary_shape(np.array([0.1, math.radians(170)]), 10.0, 0.5)
    with pytest.raises(DomainError, match="theta"):
        boundary_shape(-0.01, 10.0, 0.5)
    assert math.isfinite(float(boundary_shape(THETA_MAX, 10.0, 0.5)))


def test_boundary_r_grows_with_theta():
    params = BoundaryParams(10.0, 0.6)
    thetas = np.linspace(0, THETA_MAX, 12)
    r = boundary_shape(thetas, params.r0, params.alpha)
    assert np.all(np.diff(r) > 0)


@pytest.mark.parametrize("bz,dp", [(math.nan, 1.0), (0.0, 0.0), (0.0, -1.0), (math.inf, 2.0)])
def test_driver_input_rejects_invalid(bz, dp):
    with pytest.raises(DomainError):
        DriverInput(bz, dp)


def test_polar_point_validation():
    PolarPoint(10.0, 0.0)
    with pytest.raises(DomainError):
        PolarPoint(0.0, 0.5)
    with pytest.raises(DomainError):
        PolarPoint(10.0, math.pi)


def test_forms_reject_wrong_exponent_signs():
    with pytest.raises(DomainError, match="p_r"):
        ShueForm(p_r=0.1)
    with pytest.raises(DomainError, match="q_a"):
        OverfitForm(q_a=-0.1)
    with pytest.raises(DomainError):
        ShueForm(a0=math.nan)


def test_form_vector_helpers():
    form = ShueForm()
    assert form.coefficient_names() == ("a0", "a1", "a2", "a3", "p_r", "b0", "b1", "b2")
    assert ShueForm.from_vector(form.to_vector()) == form
    assert set(ShueForm.R0_FIELDS) | set(ShueForm.ALPHA_FIELDS) == set(form.coefficient_names())
    assert set(OverfitForm.R0_FIELDS) | set(OverfitForm.ALPHA_FIELDS) == set(OverfitForm.coefficient_names())
    with pytest.raises(ValueError):
        OverfitForm.from_vector(np.zeros(3))
    assert FORMS["overfit"] is OverfitForm


def test_model_handle_matches_direct_formula():
    model = shue_model()
    assert isinstance(model, BoundaryModel)
    assert model.model_id == "shue"
    assert float(predict_r(model, 0.0, 2.0, 0.0)) == pytest.approx(10.252, rel=1e-4)
    assert float(predict_r(model, 0.0, 1.0, 0.0)) == pytest.approx(11.387, rel=1e-4)

    bz = np.array([-10.0, 0.0, 12.0])
    dp = np.array([0.7, 2.0, 6.0])
    theta = np.radians([10.0, 60.0, 150.0])
    direct = [boundary_r(t, shue_params(DriverInput(b, d))) for b, d, t in zip(bz, dp, theta)]
    np.testing.assert_allclose(model.predict_r(bz, dp, theta), direct, rtol=1e-12)


def test_model_handle_custom_id_and_form_swap():
    model = EmpiricalModel(ShueForm(a0=11.0), model_id="refit")
    assert model.model_id == "refit"
    swapped = model.with_form(ShueForm())
    assert swapped.model_id == "refit"
    assert float(swapped.predict_r(0.0, 1.0, 0.0)) == pytest.approx(11.387118, rel=1e-6)


def test_standoff_grid_shape_and_monotonic_in_dp():
    grid = standoff_grid(shue_model(), n_bz=5, n_dp=7)
    assert grid.r0.shape == (5, 7)
    assert grid.bz[0] == -18.0 and grid.bz[-1] == 15.0
    assert grid.dp[0] == 0.5 and grid.dp[-1] == 18.0
    assert np.all(np.diff(grid.r0, axis=1) < 0)
    assert grid.r0[2, 3] == pytest.approx(shue_params(DriverInput(grid.bz[2], grid.dp[3])).r0)


def test_standoff_grid_rejects_degenerate_axes():
    with pytest.raises(DomainError):
        standoff_grid(shue_model(), n_bz=1)
    with pytest.raises(DomainError):
        standoff_grid(shue_model(), dp_range=(0.0, 5.0))
    with pytest.raises(DomainError):
        standoff_grid(shue_model(), bz_range=(5.0, 5.0))


def test_write_grid(tmp_path):
    grid = standoff_grid(overfit_model(), n_bz=4, n_dp=3)
    meta_path = write_grid(grid, tmp_path / "grid.csv")

    frame = pd.read_csv(tmp_path / "grid.csv")
    assert list(frame.columns) == ["bz", "dp", "r0"]
    assert len(frame) == 12
    np.testing.assert_allclose(frame["r0"].to_numpy(), grid.r0.ravel(), rtol=1e-11)

    meta = json.loads(meta_path.read_text())
    assert meta["n_bz"] == 4 and meta["n_dp"] == 3
    assert meta["model_id"] == "overfit"
