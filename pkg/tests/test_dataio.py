import math

import numpy as np
import pandas as pd
import pytest

from regpinn.base import DataFormatError, DomainError
from regpinn.dataio import (
    BinSpec,
    GsmPosition,
    SolarWindSample,
    bin_records,
    count_tail,
    filter_range,
    format_timestamps,
    merge,
    parse_crossings,
    parse_solarwind,
    r0_proxy,
    read_dataset,
    record_arrays,
    synth_generate,
    to_polar,
    window_starts,
    write_bins,
    write_dataset,
)
from regpinn.models import overfit_model, shue_model

from conftest import make_record

T0 = 1_200_000_000 - 1_200_000_000 % 300  # a 5-minute boundary


def write_csv(path, text):
    path.write_text(text.lstrip())
    return path


def test_to_polar():
    polar = to_polar(GsmPosition(10.0, 0.0, 0.0))
    assert polar.r == pytest.approx(10.0) and polar.theta == 0.0

    polar = to_polar(GsmPosition(0.0, 3.0, 4.0))
    assert polar.r == pytest.approx(5.0)
    assert polar.theta == pytest.approx(math.pi / 2)

    polar = to_polar(GsmPosition(-5.0, 0.0, 5.0))
    assert polar.theta == pytest.approx(3 * math.pi / 4)
    with pytest.raises(DomainError):
        to_polar(GsmPosition(0.0, 0.0, 0.0))


def test_parse_crossings(tmp_path):
    path = write_csv(
        tmp_path / "crossings.csv",
        """
timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source
2008-01-01T00:02:10Z,10.5,1.0,-2.0,THEMIS-A
2008-01-01T00:07:00Z,nan,1.0,2.0,THEMIS-B
2008-01-01T00:12:30Z,0,0,0,GEOTAIL
2008-01-01T00:20:00Z,8.0,-6.0,0.0,GEOTAIL
""",
    )
    records = parse_crossings(path)
    assert len(records) == 2
    assert records[0].source == "THEMIS-A"
    assert records[0].drivers is None
    assert records[0].timestamp == int(pd.Timestamp("2008-01-01T00:02:10Z").timestamp())
    assert records[1].polar.r == pytest.approx(10.0)


def test_parse_crossings_reports_bad_line(tmp_path):
    path = write_csv(
        tmp_path / "crossings.csv",
        """
timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source
2008-01-01T00:02:10Z,10.5,1.0,-2.0,THEMIS-A
2008-01-01T00:07:00Z,ten,1.0,2.0,THEMIS-B
""",
    )
    with pytest.raises(DataFormatError) as err:
        parse_crossings(path)
    assert err.value.line == 3
    assert ":3:" in str(err.value)


def test_parse_crossings_bad_header_and_missing_file(tmp_path):
    path = write_csv(tmp_path / "bad.csv", "time,x,y,z,source\n")
    with pytest.raises(DataFormatError) as err:
        parse_crossings(path)
    assert err.value.line == 1
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        parse_crossings(tmp_path / "nope.csv")


def test_parse_solarwind_flags_fill_and_snaps(tmp_path):
    path = write_csv(
        tmp_path / "sw.csv",
        """
timestamp,bz_nt,dp_npa
2008-01-01T00:05:00Z,-2.0,1.5
2008-01-01T00:00:00Z,9999.99,2.0
2008-01-01T00:11:00Z,1.0,99.99
2008-01-01T00:15:00Z,3.0,inf
""",
    )
    samples = parse_solarwind(path)
    assert [s.timestamp % 300 for s in samples] == [0, 0, 0]
    assert samples[0].timestamp < samples[1].timestamp < samples[2].timestamp
    assert [s.flagged for s in samples] == [True, False, True]

    custom = parse_solarwind(path, fill_values=[])
    assert not any(s.flagged for s in custom)


def test_merge_uses_containing_window():
    samples = [
        SolarWindSample(T0, -2.0, 1.5),
        SolarWindSample(T0 + 300, 4.0, 3.0, flagged=True),
        SolarWindSample(T0 + 600, 1.0, 2.0),
    ]
    inside = make_record(10.0, 10.0, 0.0, 1.0, timestamp=T0 + 299)
    flagged = make_record(10.0, 10.0, 0.0, 1.0, timestamp=T0 + 300)
    boundary = make_record(10.0, 10.0, 0.0, 1.0, timestamp=T0 + 600)
    uncovered = make_record(10.0, 10.0, 0.0, 1.0, timestamp=T0 + 900)

    result = merge([inside, flagged, boundary, uncovered], samples)
    assert result.dropped == 2
    assert [(r.drivers.bz, r.drivers.dp) for r in result.records] == [(-2.0, 1.5), (1.0, 2.0)]
    assert result.records[0].polar == inside.polar


def test_merge_tiny_fixture_files(tmp_path):
    crossings = write_csv(
        tmp_path / "c.csv",
        """
timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source
2008-01-01T00:01:00Z,10.0,0.0,1.0,A
2008-01-01T00:06:00Z,9.0,1.0,1.0,A
2008-01-01T00:31:00Z,9.5,1.0,1.0,B
""",
    )
    solarwind = write_csv(
        tmp_path / "s.csv",
        """
timestamp,bz_nt,dp_npa
2008-01-01T00:00:00Z,-1.0,2.0
2008-01-01T00:05:00Z,-3.0,2.5
""",
    )
    result = merge(parse_crossings(crossings), parse_solarwind(solarwind))
    assert len(result.records) == 2
    assert result.dropped == 1


def test_filter_range_is_strict():
    records = [
        make_record(10.0, 20.0, 0.0, 2.0),
        make_record(10.0, 20.0, -18.0, 2.0),
        make_record(10.0, 20.0, 14.9, 8.5),
        make_record(10.0, 20.0, 14.9, 8.49),
        make_record(10.0, 20.0, 3.0, 0.5),
    ]
    kept = filter_range(records)
    assert [(r.drivers.bz, r.drivers.dp) for r in kept] == [(0.0, 2.0), (14.9, 8.49)]


def test_filter_range_drops_tail_crossings():
    records = [make_record(10.0, 120.0, 0.0, 2.0), make_record(10.0, 170.0, 0.0, 2.0)]
    kept = filter_range(records)
    assert len(kept) == 1
    assert math.degrees(kept[0].polar.theta) == pytest.approx(120.0)
    assert count_tail(records) == 1
    assert count_tail(kept) == 0


def test_merge_and_filter_are_idempotent():
    samples = [SolarWindSample(T0, -2.0, 1.5), SolarWindSample(T0 + 300, 20.0, 3.0), SolarWindSample(T0 + 600, 1.0, 2.0)]
    crossings = [make_record(10.0, 10.0 * i, 0.0, 1.0, timestamp=T0 + 150 * i) for i in range(6)]
    once = merge(crossings, samples)
    twice = merge(once.records, samples)
    assert twice.records == once.records
    assert twice.dropped == 0

    filtered = filter_range(once.records)
    assert len(filtered) < len(once.records)
    assert filter_range(filtered) == filtered


def test_to_polar_round_trips():
    rng = np.random.default_rng(4)
    for x, y, z in rng.uniform(-20.0, 20.0, size=(200, 3)):
        polar = to_polar(GsmPosition(x, y, z))
        rho = math.hypot(y, z)
        assert polar.r * math.cos(polar.theta) == pytest.approx(x, rel=1e-12, abs=1e-12)
        assert polar.r * math.sin(polar.theta) == pytest.approx(rho, rel=1e-12, abs=1e-12)


def test_empty_crossings_file(tmp_path):
    header_only = write_csv(tmp_path / "header.csv", "timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n")
    assert parse_crossings(header_only) == []
    result = merge(parse_crossings(header_only), [SolarWindSample(T0, -2.0, 1.5)])
    assert result.records == [] and result.dropped == 0
    assert filter_range(result.records) == []

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataFormatError) as err:
        parse_crossings(empty)
    assert err.value.line == 1


def test_window_starts():
    np.testing.assert_allclose(window_starts(-18.0, 15.0, 1.0), np.arange(-18.0, 15.0))
    assert window_starts(0.5, 8.5, 0.5).size == 16


def test_bin_count_and_empty_bins():
    bins = bin_records([])
    assert len(bins) == 33 * 16
    assert all(b.count == 0 and math.isnan(b.mean_bz) for b in bins)


def _memberships(value_bz, value_dp):
    bins = bin_records([make_record(10.0, 30.0, value_bz, value_dp)])
    bz_windows = {b.bz_lo for b in bins if b.count}
    dp_windows = {b.dp_lo for b in bins if b.count}
    return bz_windows, dp_windows


def test_bin_membership_at_edges_and_interior():
    bz_windows, dp_windows = _memberships(-16.5, 0.7)
    assert bz_windows == {-18.0, -17.0}
    assert dp_windows == {0.5}

    bz_windows, dp_windows = _memberships(0.5, 1.0)
    assert bz_windows == {-2.0, -1.0, 0.0}
    assert dp_windows == {0.5, 1.0}

    _, dp_windows = _memberships(0.5, 3.0)
    assert dp_windows == {1.5, 2.0, 2.5, 3.0}


def test_bin_membership_matches_brute_force():
    rng = np.random.default_rng(3)
    records = [
        make_record(float(r), float(t), float(bz), float(dp))
        for r, t, bz, dp in zip(
            rng.uniform(8, 14, 1000), rng.uniform(0, 120, 1000), rng.uniform(-17.9, 14.9, 1000), rng.uniform(0.51, 8.49, 1000)
        )
    ]
    spec = BinSpec()
    bins = bin_records(records, spec)

    expected = []
    for bz_lo in window_starts(-18.0, 15.0, 1.0):
        for dp_lo in window_starts(0.5, 8.5, 0.5):
            members = []
            for i, rec in enumerate(records):
                if bz_lo <= rec.drivers.bz < bz_lo + 3.0 and dp_lo <= rec.drivers.dp < dp_lo + 2.0:
                    members.append(i)
            expected.append(tuple(members))
    assert [b.members for b in bins] == expected


def test_bin_aggregates():
    records = [make_record(10.0, 0.0, 1.0, 2.0), make_record(12.0, 0.0, 1.5, 2.2)]
    bins = bin_records(records)
    full = [b for b in bins if b.count == 2]
    assert full
    assert full[0].mean_bz == pytest.approx(1.25)
    assert full[0].mean_dp == pytest.approx(2.1)
    # theta = 0 maps r straight onto the subsolar point
    assert full[0].mean_r0_proxy == pytest.approx(11.0)


def test_r0_proxy_inverts_shue_shape():
    records = synth_generate(shue_model(), n=50, seed=4)
    bz, dp, theta, r = record_arrays(records)
    r0, _ = shue_model().params(bz, dp)
    np.testing.assert_allclose(r0_proxy(bz, dp, theta, r), r0, rtol=1e-10)


def test_bin_spec_validation():
    with pytest.raises(DomainError):
        BinSpec(bz_stride=4.0)
    with pytest.raises(DomainError):
        BinSpec(dp_width=0.0)


def test_write_bins(tmp_path):
    write_bins(bin_records([make_record(10.0, 0.0, 1.0, 2.0)]), tmp_path / "bins.csv")
    frame = pd.read_csv(tmp_path / "bins.csv")
    assert len(frame) == 528
    assert frame["count"].sum() == 3 * 4


def test_synth_generate_is_seeded_and_exact():
    a = synth_generate(overfit_model(), n=200, seed=9)
    b = synth_generate(overfit_model(), n=200, seed=9)
    assert a == b
    assert a != synth_generate(overfit_model(), n=200, seed=10)

    bz, dp, theta, r = record_arrays(a)
    assert np.all((bz >= -18) & (bz <= 15))
    assert np.all((dp >= 0.5) & (dp <= 8.5))
    assert np.all(theta <= math.radians(120) + 1e-12)
    assert all(rec.pos.y == 0.0 for rec in a)
    np.testing.assert_allclose(r, overfit_model().predict_r(bz, dp, theta), rtol=1e-12)


def test_synth_generate_noise_and_validation():
    records = synth_generate(shue_model(), n=2000, noise_sigma=0.5, seed=2)
    bz, dp, theta, r = record_arrays(records)
    residual = r - shue_model().predict_r(bz, dp, theta)
    assert np.std(residual) == pytest.approx(0.5, rel=0.1)
    assert synth_generate(shue_model(), n=0) == []
    with pytest.raises(DomainError):
        synth_generate(shue_model(), n=10, noise_sigma=-1.0)
    with pytest.raises(DomainError):
        synth_generate(shue_model(), n=10, dp_dist=(0.1, 2.0))


def test_dataset_round_trip_keeps_values(tmp_path, shue_records):
    path = tmp_path / "data.csv"
    bz, dp, theta, r = record_arrays(shue_records)
    write_dataset(shue_records, path, r_true=r)
    frame = pd.read_csv(path)
    assert "r_true_re" in frame.columns

    loaded = read_dataset(path)
    assert len(loaded) == len(shue_records)
    bz2, dp2, theta2, r2 = record_arrays(loaded)
    np.testing.assert_array_equal(bz2, bz)
    np.testing.assert_array_equal(dp2, dp)
    np.testing.assert_allclose(r2, r, rtol=1e-14)
    assert format_timestamps([loaded[0].timestamp]) == [frame["timestamp"][0]]


def test_read_dataset_requires_drivers(tmp_path):
    path = write_csv(
        tmp_path / "c.csv",
        """
timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source
2008-01-01T00:01:00Z,10.0,0.0,1.0,A
""",
    )
    with pytest.raises(DataFormatError, match="bz_nt"):
        read_dataset(path)


def test_record_arrays_requires_merged():
    rec = make_record(10.0, 0.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        record_arrays([rec.__class__(rec.timestamp, rec.pos, rec.polar)])
