"""
Crossing and solar-wind ingestion, 5-minute merge, range filtering,
overlapping (Bz, Dp) binning and seeded synthetic datasets.

File schemas:
    crossings   timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source
    solar wind  timestamp,bz_nt,dp_npa
    dataset     crossings columns + bz_nt,dp_npa[,r_true_re]

Timestamps are ISO-8601 UTC strings on disk and integer epoch seconds in memory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .base import DataFormatError, DomainError
from .models import THETA_MAX, BoundaryModel, DriverInput, PolarPoint, ShueForm, shue_r0_alpha

logger = logging.getLogger(__name__)

CROSSING_COLUMNS = ["timestamp", "x_gsm_re", "y_gsm_re", "z_gsm_re", "source"]
SOLARWIND_COLUMNS = ["timestamp", "bz_nt", "dp_npa"]
DRIVER_COLUMNS = ["bz_nt", "dp_npa"]
TRUTH_COLUMN = "r_true_re"

WINDOW_SECONDS = 300
DEFAULT_FILL_VALUES = (9999.99, 99.99)

STUDY_BZ = (-18.0, 15.0)
STUDY_DP = (0.5, 8.5)

# Synthetic timestamps start at 2000-01-01T00:00:00Z, one record per window
_SYNTH_EPOCH = 946684800

_NONFINITE_TOKENS = {"nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity"}
_EPOCH = pd.Timestamp(0, tz="UTC")


@dataclass(frozen=True)
class GsmPosition:
    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class CrossingRecord:
    timestamp: int
    pos: GsmPosition
    polar: PolarPoint
    drivers: DriverInput | None = None
    source: str = ""


@dataclass(frozen=True)
class SolarWindSample:
    timestamp: int
    bz: float
    dp: float
    flagged: bool = False


@dataclass(frozen=True)
class BinSpec:
    bz_width: float = 3.0
    bz_stride: float = 1.0
    dp_width: float = 2.0
    dp_stride: float = 0.5
    bz_range: tuple[float, float] = STUDY_BZ
    dp_range: tuple[float, float] = STUDY_DP

    def __post_init__(self) -> None:
        for name in ("bz_width", "bz_stride", "dp_width", "dp_stride"):
            if not getattr(self, name) > 0:
                raise DomainError(f"BinSpec.{name} must be > 0, got {getattr(self, name)}")
        if self.bz_stride > self.bz_width:
            raise DomainError("BinSpec.bz_stride must not exceed bz_width")
        if self.dp_stride > self.dp_width:
            raise DomainError("BinSpec.dp_stride must not exceed dp_width")
        if not self.bz_range[0] < self.bz_range[1]:
            raise DomainError(f"BinSpec.bz_range must be increasing, got {self.bz_range}")
        if not self.dp_range[0] < self.dp_range[1]:
            raise DomainError(f"BinSpec.dp_range must be increasing, got {self.dp_range}")


@dataclass(frozen=True)
class Bin:
    bz_lo: float
    bz_hi: float
    dp_lo: float
    dp_hi: float
    members: tuple[int, ...] = field(default_factory=tuple)
    mean_bz: float = math.nan
    mean_dp: float = math.nan
    mean_r0_proxy: float = math.nan

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MergeResult:
    records: list[CrossingRecord]
    dropped: int


def to_polar(pos: GsmPosition) -> PolarPoint:
    """Axisymmetric polar form: r = |pos|, theta from +X (toward the Sun)."""
    r = pos.norm()
    if not (math.isfinite(r) and r > 0):
        raise DomainError(f"position must be finite and non-zero, got {pos}")
    theta = math.atan2(math.hypot(pos.y, pos.z), pos.x)
    return PolarPoint(r=r, theta=theta)


# ----------------------------------------------------------------------
# CSV parsing
# ----------------------------------------------------------------------
def _read_frame(path: Path | str, columns: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DataFormatError("file is empty, expected a header row", path, 1) from e
    except pd.errors.ParserError as e:
        raise DataFormatError(f"malformed CSV ({e})", path) from e
    header = [c.strip() for c in frame.columns]
    if header[: len(columns)] != columns:
        raise DataFormatError(f"expected header {','.join(columns)}, got {','.join(header)}", path, 1)
    frame.columns = header
    return frame


def _numeric_column(frame: pd.DataFrame, column: str, path: Path | str) -> np.ndarray:
    raw = frame[column].astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() & ~raw.str.lower().isin(_NONFINITE_TOKENS)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError(f"cannot parse {column}={raw.iloc[row]!r}", path, row + 2)
    return values.to_numpy(dtype=float)


def _timestamp_column(frame: pd.DataFrame, path: Path | str) -> np.ndarray:
    if frame.empty:
        return np.empty(0, dtype=np.int64)
    raw = frame["timestamp"].astype(str).str.strip()
    parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    if parsed.isna().any():
        row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
        raise DataFormatError(f"cannot parse timestamp {raw.iloc[row]!r}", path, row + 2)
    seconds = ((parsed - _EPOCH) // pd.Timedelta(seconds=1)).to_numpy(dtype=np.int64)
    if np.any(seconds < 0):
        row = int(np.flatnonzero(seconds < 0)[0])
        raise DataFormatError("timestamp before 1970-01-01", path, row + 2)
    return seconds


def format_timestamps(seconds: np.ndarray | Sequence[int]) -> list[str]:
    stamps = pd.to_datetime(np.asarray(seconds, dtype=np.int64), unit="s", utc=True)
    return list(stamps.strftime("%Y-%m-%dT%H:%M:%SZ"))


def _build_crossings(frame: pd.DataFrame, path: Path | str, with_drivers: bool) -> tuple[list[CrossingRecord], list[int]]:
    stamps = _timestamp_column(frame, path)
    x = _numeric_column(frame, "x_gsm_re", path)
    y = _numeric_column(frame, "y_gsm_re", path)
    z = _numeric_column(frame, "z_gsm_re", path)
    if with_drivers:
        bz = _numeric_column(frame, "bz_nt", path)
        dp = _numeric_column(frame, "dp_npa", path)
    sources = frame["source"].astype(str).str.strip().to_list()

    records: list[CrossingRecord] = []
    rejected: list[int] = []
    for i in range(len(frame)):
        try:
            pos = GsmPosition(float(x[i]), float(y[i]), float(z[i]))
            drivers = DriverInput(float(bz[i]), float(dp[i])) if with_drivers else None
            polar = to_polar(pos)
        except DomainError as e:
            rejected.append(i + 2)
            logger.warning("%s:%d: rejected row (%s)", path, i + 2, e)
            continue
        records.append(CrossingRecord(int(stamps[i]), pos, polar, drivers, sources[i]))
    return records, rejected


def parse_crossings(path: Path | str) -> list[CrossingRecord]:
    """Parse a crossings CSV. Rows with non-finite or degenerate positions are rejected and logged."""
    frame = _read_frame(path, CROSSING_COLUMNS)
    records, rejected = _build_crossings(frame, path, with_drivers=False)
    if rejected:
        logger.warning("%s: rejected %d of %d rows (lines %s)", path, len(rejected), len(frame), rejected)
    return records


def parse_solarwind(path: Path | str, fill_values: Sequence[float] = DEFAULT_FILL_VALUES) -> list[SolarWindSample]:
    """Parse a 5-minute solar-wind CSV, flag fill values and sort by time."""
    frame = _read_frame(path, SOLARWIND_COLUMNS)
    stamps = _timestamp_column(frame, path)
    bz = _numeric_column(frame, "bz_nt", path)
    dp = _numeric_column(frame, "dp_npa", path)

    off_grid = stamps % WINDOW_SECONDS != 0
    if off_grid.any():
        lines = (np.flatnonzero(off_grid) + 2).tolist()
        logger.warning("%s: snapped %d timestamps down to 5-minute boundaries (lines %s)", path, len(lines), lines)
        stamps = stamps - stamps % WINDOW_SECONDS

    fills = np.asarray(list(fill_values), dtype=float)
    samples: list[SolarWindSample] = []
    for i in range(len(frame)):
        if not (math.isfinite(bz[i]) and math.isfinite(dp[i])):
            logger.warning("%s:%d: rejected row (non-finite bz or dp)", path, i + 2)
            continue
        flagged = bool(fills.size and (np.any(np.isclose(bz[i], fills)) or np.any(np.isclose(dp[i], fills))))
        samples.append(SolarWindSample(int(stamps[i]), float(bz[i]), float(dp[i]), flagged))
    samples.sort(key=lambda s: s.timestamp)
    n_flagged = sum(s.flagged for s in samples)
    if n_flagged:
        logger.info("%s: %d of %d samples carry fill values", path, n_flagged, len(samples))
    return samples


def read_dataset(path: Path | str) -> list[CrossingRecord]:
    """Read a merged or synthetic dataset (crossings schema + bz_nt,dp_npa)."""
    frame = _read_frame(path, CROSSING_COLUMNS)
    missing = [c for c in DRIVER_COLUMNS if c not in frame.columns]
    if missing:
        raise DataFormatError(f"dataset is missing columns {missing}", path, 1)
    records, rejected = _build_crossings(frame, path, with_drivers=True)
    if rejected:
        logger.warning("%s: rejected %d of %d rows", path, len(rejected), len(frame))
    return records


def write_dataset(records: Sequence[CrossingRecord], path: Path | str, r_true: np.ndarray | None = None) -> None:
    """Write records with drivers; r_true adds the ground-truth column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bz, dp, _, _ = record_arrays(records)
    frame = pd.DataFrame(
        {
            "timestamp": format_timestamps([rec.timestamp for rec in records]),
            "x_gsm_re": [rec.pos.x for rec in records],
            "y_gsm_re": [rec.pos.y for rec in records],
            "z_gsm_re": [rec.pos.z for rec in records],
            "source": [rec.source for rec in records],
            "bz_nt": bz,
            "dp_npa": dp,
        }
    )
    if r_true is not None:
        frame[TRUTH_COLUMN] = np.asarray(r_true, dtype=float)
    frame.to_csv(path, index=False, float_format="%.17g")


def record_arrays(records: Sequence[CrossingRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Columns (bz, dp, theta, r) of merged records."""
    if any(rec.drivers is None for rec in records):
        raise DomainError("records must be merged with solar-wind drivers first")
    bz = np.array([rec.drivers.bz for rec in records], dtype=float)  # type: ignore[union-attr]
    dp = np.array([rec.drivers.dp for rec in records], dtype=float)  # type: ignore[union-attr]
    theta = np.array([rec.polar.theta for rec in records], dtype=float)
    r = np.array([rec.polar.r for rec in records], dtype=float)
    return bz, dp, theta, r


# ----------------------------------------------------------------------
# merge / filter / bin
# ----------------------------------------------------------------------
def merge(crossings: Sequence[CrossingRecord], solarwind: Sequence[SolarWindSample]) -> MergeResult:
    """Attach drivers from the 5-minute window [t0, t0 + 300) containing each crossing."""
    windows: dict[int, SolarWindSample] = {}
    for sample in solarwind:
        if not sample.flagged:
            windows.setdefault(sample.timestamp, sample)

    merged: list[CrossingRecord] = []
    dropped = 0
    for rec in crossings:
        sample = windows.get(rec.timestamp - rec.timestamp % WINDOW_SECONDS)
        if sample is None:
            dropped += 1
            continue
        merged.append(replace(rec, drivers=DriverInput(sample.bz, sample.dp)))
    if dropped:
        logger.warning("Dropped %d of %d crossings without an unflagged solar-wind sample", dropped, len(crossings))
    return MergeResult(merged, dropped)


def filter_range(records: Sequence[CrossingRecord], spec: BinSpec = BinSpec()) -> list[CrossingRecord]:
    """Keep records with bz_min < bz < bz_max, dp_min < dp < dp_max and theta <= THETA_MAX."""
    bz_lo, bz_hi = spec.bz_range
    dp_lo, dp_hi = spec.dp_range
    return [
        rec
        for rec in records
        if rec.drivers is not None
        and bz_lo < rec.drivers.bz < bz_hi
        and dp_lo < rec.drivers.dp < dp_hi
        and rec.polar.theta <= THETA_MAX
    ]


def count_tail(records: Sequence[CrossingRecord]) -> int:
    """Records past THETA_MAX, which no boundary model accepts."""
    return sum(rec.polar.theta > THETA_MAX for rec in records)


def window_starts(lo: float, hi: float, stride: float) -> np.ndarray:
    """Left edges lo + k*stride for every window starting below hi."""
    n = int(math.ceil((hi - lo) / stride - 1e-9))
    return lo + stride * np.arange(n)


def r0_proxy(bz: np.ndarray, dp: np.ndarray, theta: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Map each crossing to the subsolar point using the baseline flaring."""
    _, alpha = shue_r0_alpha(bz, dp, ShueForm())
    return r * ((1.0 + np.cos(theta)) / 2.0) ** alpha


def bin_records(records: Sequence[CrossingRecord], spec: BinSpec = BinSpec()) -> list[Bin]:
    """Overlapping half-open windows on both axes; a record joins every window covering it."""
    bz_starts = window_starts(spec.bz_range[0], spec.bz_range[1], spec.bz_stride)
    dp_starts = window_starts(spec.dp_range[0], spec.dp_range[1], spec.dp_stride)

    if records:
        bz, dp, theta, r = record_arrays(records)
        proxy = r0_proxy(bz, dp, theta, r)
    else:
        bz = dp = proxy = np.empty(0)

    bins: list[Bin] = []
    for bz_lo in bz_starts:
        bz_hi = bz_lo + spec.bz_width
        in_bz = (bz >= bz_lo) & (bz < bz_hi)
        for dp_lo in dp_starts:
            dp_hi = dp_lo + spec.dp_width
            members = np.flatnonzero(in_bz & (dp >= dp_lo) & (dp < dp_hi))
            if members.size:
                bins.append(
                    Bin(
                        float(bz_lo), float(bz_hi), float(dp_lo), float(dp_hi),
                        tuple(int(i) for i in members),
                        float(bz[members].mean()),
                        float(dp[members].mean()),
                        float(proxy[members].mean()),
                    )
                )
            else:
                bins.append(Bin(float(bz_lo), float(bz_hi), float(dp_lo), float(dp_hi)))
    logger.debug("Binned %d records into %d windows", len(records), len(bins))
    return bins


def write_bins(bins: Sequence[Bin], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "bz_lo": [b.bz_lo for b in bins],
            "bz_hi": [b.bz_hi for b in bins],
            "dp_lo": [b.dp_lo for b in bins],
            "dp_hi": [b.dp_hi for b in bins],
            "count": [b.count for b in bins],
            "mean_bz": [b.mean_bz for b in bins],
            "mean_dp": [b.mean_dp for b in bins],
            "mean_r0_proxy": [b.mean_r0_proxy for b in bins],
        }
    )
    frame.to_csv(path, index=False, float_format="%.12g")


# ----------------------------------------------------------------------
# synthetic data
# ----------------------------------------------------------------------
def _check_range(name: str, bounds: tuple[float, float], lo: float, hi: float) -> None:
    a, b = bounds
    if not (math.isfinite(a) and math.isfinite(b) and lo <= a < b <= hi):
        raise DomainError(f"{name} must satisfy {lo} <= lo < hi <= {hi}, got {bounds}")


def synth_generate(
    model: BoundaryModel,
    n: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    bz_dist: tuple[float, float] = STUDY_BZ,
    dp_dist: tuple[float, float] = STUDY_DP,
    theta_dist: tuple[float, float] = (0.0, math.radians(120.0)),
) -> list[CrossingRecord]:
    """Draw uniform drivers and angles, place r = model + N(0, sigma) on the y = 0 half-plane."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if not (math.isfinite(noise_sigma) and noise_sigma >= 0):
        raise DomainError(f"noise_sigma must be >= 0, got {noise_sigma}")
    _check_range("bz_dist", bz_dist, *STUDY_BZ)
    _check_range("dp_dist", dp_dist, *STUDY_DP)
    _check_range("theta_dist", theta_dist, 0.0, THETA_MAX)

    rng = np.random.default_rng(seed)
    bz = rng.uniform(*bz_dist, size=n)
    dp = rng.uniform(*dp_dist, size=n)
    theta = rng.uniform(*theta_dist, size=n)
    r = np.asarray(model.predict_r(bz, dp, theta), dtype=float)
    if noise_sigma > 0:
        r = r + rng.normal(0.0, noise_sigma, size=n)
    if np.any(r <= 0):
        raise DomainError("noise produced non-positive radial distances; lower noise_sigma")

    records = []
    for i in range(n):
        pos = GsmPosition(float(r[i] * math.cos(theta[i])), 0.0, float(r[i] * math.sin(theta[i])))
        records.append(
            CrossingRecord(
                timestamp=_SYNTH_EPOCH + WINDOW_SECONDS * i,
                pos=pos,
                polar=to_polar(pos),
                drivers=DriverInput(float(bz[i]), float(dp[i])),
                source="SYNTH",
            )
        )
    return records
