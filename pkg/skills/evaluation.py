"""
Correction and segmentation quality metrics.

Per-material uniformity (std, mean, coefficient of variation), one-vs-rest
sensitivity and specificity, mean error, pooled two-sample t-test, bone
counts per slice and line profiles. Reports serialize to JSON and CSV.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import betainc

from skills.volume import BONE, MATERIALS, LabelVolume, Mask, Volume, require_same_dims

logger = logging.getLogger(__name__)

SIGNIFICANCE = 0.05


class MaterialStats(BaseModel):
    material: str
    count: int
    mean: float | None = None
    std: float | None = None
    cov_percent: float | None = Field(None, description="100 * std / mean, absent unless mean > 0")


class ConfusionStats(BaseModel):
    material: str
    tp: int
    fn: int
    fp: int
    tn: int
    sensitivity: float | None = Field(None, description="TP / (TP + FN)")
    specificity: float | None = Field(None, description="TN / (TN + FP)")


class TTestResult(BaseModel):
    t: float
    dof: int
    p: float
    significant_at_5pct: bool
    degenerate: bool = Field(False, description="Zero pooled variance with unequal means")


class EvalReport(BaseModel):
    name: str = ""
    uniformity: list[MaterialStats] = Field(default_factory=list)
    confusion: list[ConfusionStats] = Field(default_factory=list)
    mean_error_percent: float = 0.0
    bone_count_per_slice: list[int] = Field(default_factory=list)
    ttest: TTestResult | None = None
    elapsed_seconds: float | None = Field(None, exclude=True, description="Wall time, kept out of report files")

    def csv_row(self) -> dict:
        row = {"name": self.name, "mean_error_percent": self.mean_error_percent}
        for stats in self.confusion:
            row[f"{stats.material}_sensitivity"] = stats.sensitivity
            row[f"{stats.material}_specificity"] = stats.specificity
        for stats in self.uniformity:
            row[f"{stats.material}_mean"] = stats.mean
            row[f"{stats.material}_std"] = stats.std
            row[f"{stats.material}_cov_percent"] = stats.cov_percent
        row["bone_total"] = sum(self.bone_count_per_slice)
        return row

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write <stem>.json and a one-row <stem>.csv."""
        path = Path(path)
        json_path, csv_path = path.with_suffix(".json"), path.with_suffix(".csv")
        json_path.write_text(self.model_dump_json(indent=2))
        write_reports_csv([self], csv_path)
        return json_path, csv_path


class BatchSummary(BaseModel):
    count: int
    sensitivity: dict[str, float | None]
    specificity: dict[str, float | None]
    mean_error_percent_mean: float
    mean_error_percent_std: float
    elapsed_seconds_mean: float | None = Field(None, exclude=True)


# ── Metrics ──────────────────────────────────────────────────────────────────

def _selection(labels: LabelVolume, mask: Mask | None) -> np.ndarray:
    if mask is None:
        return np.ones(labels.labels.shape, dtype=bool)
    require_same_dims(labels, mask)
    return mask.bits


def material_uniformity(v: Volume, truth_labels: LabelVolume, mask: Mask | None = None) -> list[MaterialStats]:
    """Population std, mean and CoV of v over each material's voxels."""
    require_same_dims(v, truth_labels)
    selected = _selection(truth_labels, mask)
    stats = []
    for label, name in MATERIALS.items():
        values = v.data[selected & (truth_labels.labels == label)].astype(np.float64)
        if values.size == 0:
            stats.append(MaterialStats(material=name, count=0))
            continue
        mean, std = float(values.mean()), float(values.std())
        cov = 100.0 * std / mean if mean > 0 else None
        stats.append(MaterialStats(material=name, count=int(values.size), mean=mean, std=std, cov_percent=cov))
    return stats


def _ratio(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def confusion_metrics(pred: LabelVolume, truth: LabelVolume,
                      mask: Mask | None = None) -> tuple[list[ConfusionStats], float]:
    """One-vs-rest confusion per material over the mask, plus 100 * misclassified / masked."""
    require_same_dims(pred, truth)
    selected = _selection(truth, mask)
    p, t = pred.labels[selected], truth.labels[selected]
    if t.size == 0:
        raise ValueError("No voxels to evaluate")

    stats = []
    for label, name in MATERIALS.items():
        is_pred, is_true = p == label, t == label
        tp = int(np.count_nonzero(is_pred & is_true))
        fn = int(np.count_nonzero(~is_pred & is_true))
        fp = int(np.count_nonzero(is_pred & ~is_true))
        tn = int(np.count_nonzero(~is_pred & ~is_true))
        stats.append(ConfusionStats(material=name, tp=tp, fn=fn, fp=fp, tn=tn,
                                    sensitivity=_ratio(tp, tp + fn), specificity=_ratio(tn, tn + fp)))
    mean_error = 100.0 * np.count_nonzero(p != t) / t.size
    return stats, float(mean_error)


def two_sample_ttest(a, b) -> TTestResult:
    """Pooled-variance two-sample t-test, two-sided p from the regularized incomplete beta."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"Each sample needs at least 2 values, got {a.size} and {b.size}")

    dof = a.size + b.size - 2
    diff = a.mean() - b.mean()
    pooled = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / dof
    se = math.sqrt(pooled * (1.0 / a.size + 1.0 / b.size))

    if se == 0:
        if diff == 0:
            return TTestResult(t=0.0, dof=dof, p=1.0, significant_at_5pct=False)
        logger.warning("Zero pooled variance with unequal means, t-test is degenerate")
        return TTestResult(t=math.copysign(math.inf, diff), dof=dof, p=0.0, significant_at_5pct=True, degenerate=True)

    t = float(diff / se)
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return TTestResult(t=t, dof=dof, p=p, significant_at_5pct=p < SIGNIFICANCE)


def bone_per_slice(labels: LabelVolume) -> list[int]:
    """Bone voxel count per z-slice, lowest slice first."""
    return [int(c) for c in np.count_nonzero(labels.labels == BONE, axis=(1, 2))]


def line_profile(v: Volume, axis: Literal["x", "y"], index: int, slice_index: int = 0) -> np.ndarray:
    """Intensities along x at row `index`, or along y at column `index`, in one z-slice."""
    nx, ny, nz = v.dims
    if not 0 <= slice_index < nz:
        raise ValueError(f"Slice {slice_index} outside [0, {nz})")
    if axis == "x":
        if not 0 <= index < ny:
            raise ValueError(f"Row {index} outside [0, {ny})")
        return v.data[slice_index, index, :].astype(np.float64)
    if axis == "y":
        if not 0 <= index < nx:
            raise ValueError(f"Column {index} outside [0, {nx})")
        return v.data[slice_index, :, index].astype(np.float64)
    raise ValueError(f"Profile axis must be 'x' or 'y', got {axis!r}")


def center_edge_spread(values, center_halfwidth: int = 3, edge_width: int = 4) -> float:
    """|mean of the central window - mean of both end windows|, a cupping depth measure."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2 * edge_width + 2 * center_halfwidth + 1:
        raise ValueError(f"Profile of {values.size} samples is too short")
    mid = values.size // 2
    center = values[mid - center_halfwidth: mid + center_halfwidth + 1]
    edges = np.concatenate([values[:edge_width], values[-edge_width:]])
    return float(abs(center.mean() - edges.mean()))


def evaluate(pred: LabelVolume, truth: LabelVolume, mask: Mask | None = None,
             volume: Volume | None = None, name: str = "") -> EvalReport:
    confusion, mean_error = confusion_metrics(pred, truth, mask)
    uniformity = material_uniformity(volume, truth, mask) if volume is not None else []
    return EvalReport(name=name, uniformity=uniformity, confusion=confusion,
                      mean_error_percent=mean_error, bone_count_per_slice=bone_per_slice(pred))


# ── Aggregation and files ────────────────────────────────────────────────────

def _mean_or_none(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def summarize_reports(reports: list[EvalReport]) -> BatchSummary:
    """Averages over runs: sensitivity and specificity per material, mean error, time."""
    if not reports:
        raise ValueError("No reports to summarize")
    errors = np.array([r.mean_error_percent for r in reports])
    sensitivity, specificity = {}, {}
    for name in MATERIALS.values():
        rows = [s for r in reports for s in r.confusion if s.material == name]
        sensitivity[name] = _mean_or_none([s.sensitivity for s in rows])
        specificity[name] = _mean_or_none([s.specificity for s in rows])
    return BatchSummary(
        count=len(reports),
        sensitivity=sensitivity,
        specificity=specificity,
        mean_error_percent_mean=float(errors.mean()),
        mean_error_percent_std=float(errors.std()),
        elapsed_seconds_mean=_mean_or_none([r.elapsed_seconds for r in reports]),
    )


def write_reports_csv(reports: list[EvalReport], path: str | Path) -> Path:
    path = Path(path)
    rows = [r.csv_row() for r in reports]
    columns = list(dict.fromkeys(key for row in rows for key in row))
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows({k: ("" if v is None else v) for k, v in row.items()} for row in rows)
    return path


def write_profile_csv(values, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["position", "value"])
        writer.writerows(enumerate(np.asarray(values, dtype=np.float64).tolist()))
    return path


def write_slice_counts_csv(counts: list[int], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["slice", "bone_count"])
        writer.writerows(enumerate(counts))
    return path


def read_mean_errors(path: str | Path) -> list[float]:
    """mean_error_percent of every run in a report CSV, a report JSON or a batch JSON."""
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as f:
            rows = list(csv.DictReader(f))
        if rows and "mean_error_percent" not in rows[0]:
            raise ValueError(f"{path} has no mean_error_percent column")
        return [float(row["mean_error_percent"]) for row in rows]

    data = json.loads(path.read_text())
    if isinstance(data, dict) and "reports" in data:
        return [float(r["mean_error_percent"]) for r in data["reports"]]
    if isinstance(data, dict) and "mean_error_percent" in data:
        return [float(data["mean_error_percent"])]
    raise ValueError(f"{path} holds no mean_error_percent values")
