"""
Model evaluation: overall RMSE, RMSE binned along theta / Dp / Bz,
lambda sweeps and model-comparison tables.

A split protocol is a training fraction; the RMSE is reported on the masked
remainder. Protocol None evaluates on every record without a split.
A trained entry whose loss went non-finite raises NumericalError instead of
reporting the RMSE of a partly trained network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .base import DomainError, NumericalError
from .dataio import BinSpec, CrossingRecord, filter_range, record_arrays
from .models import THETA_MAX, BoundaryModel, shue_model
from .train import STOP_NON_FINITE, TrainConfig, split, train_reg_pinn

logger = logging.getLogger(__name__)

AXES = ("theta", "dp", "bz")

DEFAULT_EDGES = {
    "theta": np.append(np.radians(np.arange(0.0, 165.0, 15.0)), THETA_MAX),
    "bz": np.arange(-18.0, 15.0 + 1e-9, 3.0),
    "dp": np.arange(0.5, 8.5 + 1e-9, 1.0),
}

DEFAULT_PROTOCOLS = (0.8, 0.2)
DEFAULT_LAMBDAS = (0.1, 0.5, 1.0, 2.0, 5.0)

Protocol = Union[float, None]
ModelEntry = Union[BoundaryModel, TrainConfig]


@dataclass(frozen=True)
class BinnedPoint:
    lo: float
    hi: float
    center: float
    count: int
    rmse: float | None


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    dataset_id: str
    n_records: int
    rmse: float
    curves: dict[str, list[BinnedPoint]]


@dataclass(frozen=True)
class SweepRow:
    lam: float
    protocol: float
    rmse: float


@dataclass(frozen=True)
class SweepResult:
    lambdas: tuple[float, ...]
    rows: list[SweepRow]

    def rmse(self, lam: float, protocol: float) -> float:
        for row in self.rows:
            if row.lam == lam and row.protocol == protocol:
                return row.rmse
        raise KeyError((lam, protocol))


@dataclass(frozen=True)
class ComparisonTable:
    protocols: tuple[Protocol, ...]
    rows: dict[str, dict[Protocol, float]]
    baseline_id: str
    # RMSE on the masked records inside the baseline's applicable range; empty when not requested
    region_rows: dict[str, dict[Protocol, float]] = field(default_factory=dict)
    reports: dict[str, dict[Protocol, EvalReport]] = field(default_factory=dict)

    def reduction(self, model_id: str, protocol: Protocol) -> float:
        """Fractional RMSE reduction against the baseline row."""
        base = self.rows[self.baseline_id][protocol]
        return 1.0 - self.rows[model_id][protocol] / base if base > 0 else math.nan


def protocol_label(protocol: Protocol) -> str:
    """Label a protocol by its masked share, e.g. 0.8 -> '20%'."""
    if protocol is None:
        return "all"
    return f"{round((1.0 - protocol) * 100):d}%"


def _squared_errors(model: BoundaryModel, records: Sequence[CrossingRecord]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    bz, dp, theta, r = record_arrays(records)
    err = r - np.asarray(model.predict_r(bz, dp, theta), dtype=float)
    return err * err, {"theta": theta, "dp": dp, "bz": bz}


def rmse(model: BoundaryModel, records: Sequence[CrossingRecord]) -> float:
    """sqrt(mean((r_obs - r_pred)^2)) in Re."""
    if not records:
        raise DomainError("rmse needs at least one record")
    sq, _ = _squared_errors(model, records)
    return math.sqrt(float(sq.mean()))


def binned_rmse(
    model: BoundaryModel,
    records: Sequence[CrossingRecord],
    axis: str,
    edges: Sequence[float] | np.ndarray | None = None,
) -> list[BinnedPoint]:
    """Per-bin RMSE on half-open [edge_k, edge_k+1) bins; empty bins have rmse None.

    The last bin also takes values equal to the top edge, so a record at
    theta_max lands in the final theta bin.
    """
    if axis not in AXES:
        raise DomainError(f"axis must be one of {AXES}, got '{axis}'")
    edges = DEFAULT_EDGES[axis] if edges is None else np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0) or not np.all(np.isfinite(edges)):
        raise DomainError("edges must be a finite, strictly increasing sequence of at least 2 values")

    if records:
        sq, columns = _squared_errors(model, records)
        values = columns[axis]
    else:
        sq = values = np.empty(0)

    curve = []
    last = edges.size - 2
    for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        mask = (values >= lo) & ((values <= hi) if k == last else (values < hi))
        count = int(mask.sum())
        value = math.sqrt(float(sq[mask].mean())) if count else None
        curve.append(BinnedPoint(float(lo), float(hi), float((lo + hi) / 2), count, value))
    return curve


def evaluate(
    model: BoundaryModel,
    records: Sequence[CrossingRecord],
    dataset_id: str = "",
    edges: Mapping[str, Sequence[float]] | None = None,
) -> EvalReport:
    edges = edges or {}
    curves = {axis: binned_rmse(model, records, axis, edges.get(axis)) for axis in AXES}
    return EvalReport(model.model_id, dataset_id, len(records), rmse(model, records), curves)


def _subset(records: Sequence[CrossingRecord], idx: np.ndarray) -> list[CrossingRecord]:
    return [records[i] for i in idx]


def masked_model(
    records: Sequence[CrossingRecord], entry: ModelEntry, protocol: Protocol, seed: int
) -> tuple[BoundaryModel, list[CrossingRecord]]:
    """Resolve an entry under a protocol to (model, masked records), training it if needed."""
    if protocol is None:
        if isinstance(entry, TrainConfig):
            raise DomainError("trainable entries need a split protocol")
        return entry, list(records)
    if isinstance(entry, TrainConfig):
        result = train_reg_pinn(records, replace(entry, split_fraction=protocol, seed=seed))
        if result.stop_reason == STOP_NON_FINITE:
            raise NumericalError(
                f"training at lambda={entry.lam:g}, protocol {protocol_label(protocol)} "
                f"aborted on a non-finite loss after {result.epochs_run} epochs"
            )
        return result.model(), _subset(records, result.test_idx)
    _, test_idx = split(len(records), protocol, seed)
    return entry, _subset(records, test_idx)


def _masked_rmse(records: Sequence[CrossingRecord], entry: ModelEntry, protocol: Protocol, seed: int) -> float:
    return rmse(*masked_model(records, entry, protocol, seed))


def lambda_sweep(
    records: Sequence[CrossingRecord],
    base: TrainConfig,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    protocols: Sequence[float] = DEFAULT_PROTOCOLS,
) -> SweepResult:
    """Train at every lambda under every protocol with one shared seed; report masked RMSE."""
    if not lambdas:
        raise DomainError("lambda list must not be empty")
    if any(not lam >= 0 for lam in lambdas):
        raise DomainError(f"lambdas must be >= 0, got {list(lambdas)}")
    rows = []
    for lam in lambdas:
        for protocol in protocols:
            value = _masked_rmse(records, replace(base, lam=float(lam)), protocol, base.seed)
            logger.info("lambda=%g protocol=%s rmse=%.6f", lam, protocol_label(protocol), value)
            rows.append(SweepRow(float(lam), float(protocol), value))
    return SweepResult(tuple(float(lam) for lam in lambdas), rows)


def comparison_table(
    records: Sequence[CrossingRecord],
    models: Mapping[str, ModelEntry],
    protocols: Sequence[Protocol] = DEFAULT_PROTOCOLS,
    seed: int = 0,
    baseline: BoundaryModel | None = None,
    region: BinSpec | None = None,
    binned: bool = False,
    edges: Mapping[str, Sequence[float]] | None = None,
) -> ComparisonTable:
    """Rows are models, columns protocols; the Shue baseline row is always present.

    With region, each cell also gets the RMSE over the masked records that
    filter_range keeps. With binned, each cell keeps a full EvalReport of
    theta / Dp / Bz curves on its masked records.
    """
    baseline = baseline or shue_model()
    entries: dict[str, ModelEntry] = {baseline.model_id: baseline}
    entries.update(models)
    rows: dict[str, dict[Protocol, float]] = {}
    region_rows: dict[str, dict[Protocol, float]] = {}
    reports: dict[str, dict[Protocol, EvalReport]] = {}
    for model_id, entry in entries.items():
        rows[model_id] = {}
        for p in protocols:
            model, masked = masked_model(records, entry, p, seed)
            rows[model_id][p] = rmse(model, masked)
            if region is not None:
                inside = filter_range(masked, region)
                region_rows.setdefault(model_id, {})[p] = rmse(model, inside) if inside else math.nan
            if binned:
                reports.setdefault(model_id, {})[p] = evaluate(model, masked, protocol_label(p), edges)
        logger.info("%s: %s", model_id, ", ".join(f"{protocol_label(p)}={v:.4f}" for p, v in rows[model_id].items()))
    return ComparisonTable(tuple(protocols), rows, baseline.model_id, region_rows, reports)


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------
def _fmt(value: float | None) -> str:
    return "-" if value is None or not math.isfinite(value) else f"{value:.4f}"


def format_report(report: EvalReport) -> str:
    lines = [f"{report.model_id} on {report.dataset_id or 'dataset'}: n={report.n_records} rmse={report.rmse:.4f} Re"]
    for axis, curve in report.curves.items():
        lines.append(f"\n  {axis:>5} {'lo':>9} {'hi':>9} {'count':>7} {'rmse':>8}")
        for point in curve:
            lo, hi = (math.degrees(point.lo), math.degrees(point.hi)) if axis == "theta" else (point.lo, point.hi)
            lines.append(f"  {'':>5} {lo:9.2f} {hi:9.2f} {point.count:7d} {_fmt(point.rmse):>8}")
    return "\n".join(lines)


def report_frame(report: EvalReport) -> pd.DataFrame:
    rows = [("all", math.nan, math.nan, report.n_records, report.rmse)]
    for axis, curve in report.curves.items():
        rows.extend((axis, p.lo, p.hi, p.count, math.nan if p.rmse is None else p.rmse) for p in curve)
    frame = pd.DataFrame(rows, columns=["axis", "lo", "hi", "count", "rmse_re"])
    frame.insert(0, "model_id", report.model_id)
    return frame


def format_table(table: ComparisonTable) -> str:
    width = max(len("Model"), *(len(m) for m in table.rows))
    heads = [f"RMSE ({protocol_label(p)})" for p in table.protocols]
    heads += [f"Reduction ({protocol_label(p)})" for p in table.protocols]
    if table.region_rows:
        heads += [f"In range ({protocol_label(p)})" for p in table.protocols]
    lines = [f"{'Model':<{width}}  " + "  ".join(f"{h:>16}" for h in heads)]
    for model_id, values in table.rows.items():
        cells = [f"{values[p]:.4f} Re" for p in table.protocols]
        cells += [f"{table.reduction(model_id, p) * 100:.1f}%" for p in table.protocols]
        if table.region_rows:
            cells += [f"{_fmt(table.region_rows[model_id][p])} Re" for p in table.protocols]
        lines.append(f"{model_id:<{width}}  " + "  ".join(f"{c:>16}" for c in cells))
    return "\n".join(lines)


def table_frame(table: ComparisonTable) -> pd.DataFrame:
    rows = []
    for model_id, values in table.rows.items():
        for p in table.protocols:
            rows.append((model_id, protocol_label(p), values[p], table.reduction(model_id, p)))
    frame = pd.DataFrame(rows, columns=["model_id", "protocol", "rmse_re", "reduction"])
    if table.region_rows:
        frame["rmse_in_range_re"] = [table.region_rows[m][p] for m in table.rows for p in table.protocols]
    return frame


def binned_frame(table: ComparisonTable) -> pd.DataFrame:
    """Long-form binned curves of every (model, protocol) cell."""
    if not table.reports:
        raise DomainError("comparison table was built without binned reports")
    frames = []
    for model_id, by_protocol in table.reports.items():
        for p, report in by_protocol.items():
            frame = report_frame(report)
            frame["model_id"] = model_id
            frame.insert(1, "protocol", protocol_label(p))
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def sweep_frame(result: SweepResult) -> pd.DataFrame:
    return pd.DataFrame(
        [(row.lam, protocol_label(row.protocol), row.rmse) for row in result.rows],
        columns=["lambda", "protocol", "rmse_re"],
    )


def write_frame(frame: pd.DataFrame, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.9g")
