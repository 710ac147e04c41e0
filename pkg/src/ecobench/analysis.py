"""Classification metrics, rank-based ROC-AUC and the EDA tables."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import CATEGORICAL_COLUMNS, Dataset
from .errors import DataError, ShapeError, UndefinedMetricError

STAT_NAMES = ("mean", "std", "min", "q1", "median", "q3", "max")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsRow:
    model: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None = None
    train_seconds: float | None = None
    inference_seconds: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-d")
    if not np.all(np.isin(a, (0, 1))):
        raise ShapeError(f"{name} must contain only 0/1")
    return a.astype(np.int64)


def confusion_counts(y_true, y_pred) -> ConfusionCounts:
    t = _binary(y_true, "y_true")
    p = _binary(y_pred, "y_pred")
    if t.shape != p.shape:
        raise ShapeError(f"length mismatch: {t.shape[0]} labels vs {p.shape[0]} predictions")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    tn = int(np.sum((t == 0) & (p == 0)))
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_counts(c: ConfusionCounts) -> dict[str, float]:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return {
        "accuracy": _ratio(c.tp + c.tn, c.n),
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
    }


def classification_report(y_true, y_pred, model: str = "") -> MetricsRow:
    """Accuracy, precision, recall and F1 for the anomaly class; 0/0 counts as 0."""
    return MetricsRow(model=model, **metrics_from_counts(confusion_counts(y_true, y_pred)))


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    t = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeError(f"length mismatch: {t.shape[0]} labels vs {s.shape[0]} scores")
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC is undefined when only one class is present")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average 1-based rank for each run of tied scores
    starts = np.flatnonzero(np.concatenate([[True], sorted_s[1:] != sorted_s[:-1]]))
    ends = np.concatenate([starts[1:], [len(s)]])
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(s))
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------- EDA

def numeric_columns(ds: Dataset) -> list[str]:
    return [c for c in ds.column_names if c not in CATEGORICAL_COLUMNS and ds[c].dtype.kind in "if"]


def summary_stats(ds: Dataset, columns: list[str] | None = None) -> dict[str, dict[str, float]]:
    """Per-column mean, population std and linear-interpolation quartiles."""
    if len(ds) == 0:
        raise DataError("summary statistics need at least one row")
    out = {}
    for c in columns or numeric_columns(ds):
        x = ds[c].astype(np.float64)
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
        out[c] = {
            "mean": float(x.mean()),
            "std": float(x.std()),
            "min": float(x.min()),
            "q1": float(q1),
            "median": float(med),
            "q3": float(q3),
            "max": float(x.max()),
        }
    return out


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def pearson_matrix(ds: Dataset, columns: list[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Symmetric correlation matrix; constant columns correlate 0 with everything else."""
    cols = columns or numeric_columns(ds)
    if len(ds) < 2:
        raise DataError("correlation needs at least 2 rows")
    d = len(cols)
    m = np.zeros((d, d))
    for i in range(d):
        xi = ds[cols[i]]
        m[i, i] = 1.0 if np.ptp(xi) > 0 else 0.0
        for j in range(i + 1, d):
            m[i, j] = m[j, i] = pearson(xi, ds[cols[j]])
    return cols, m


def grouped_stats(ds: Dataset, by: str = "status", columns: list[str] | None = None) -> dict[int, dict[str, dict]]:
    """Per-class means and population stds of every numeric column."""
    labels = ds[by]
    present = set(np.unique(labels).tolist())
    missing = {0, 1} - present
    if missing:
        raise DataError(f"grouped statistics need both classes; missing {sorted(missing)}")
    cols = [c for c in (columns or numeric_columns(ds)) if c != by]
    out = {}
    for cls in (0, 1):
        mask = labels == cls
        out[cls] = {c: {"mean": float(ds[c][mask].mean()), "std": float(ds[c][mask].std())} for c in cols}
    return out


def category_counts(ds: Dataset) -> dict[str, dict[str, int]]:
    out = {}
    for c in list(CATEGORICAL_COLUMNS) + ["status"]:
        vals, counts = np.unique(ds[c].astype(str), return_counts=True)
        out[c] = {str(v): int(k) for v, k in zip(vals, counts)}
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_eda(ds: Dataset, out_dir: str | Path, scatter_pairs=None) -> list[Path]:
    """Write the tables behind the univariate, categorical, correlation,
    by-status and pairwise views as CSV files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    p = out / "summary.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", *STAT_NAMES])
        for c, s in summary_stats(ds).items():
            w.writerow([c, *(_fmt(s[k]) for k in STAT_NAMES)])
    written.append(p)

    p = out / "categorical_counts.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "category", "count"])
        for c, counts in category_counts(ds).items():
            for k, v in counts.items():
                w.writerow([c, k, v])
    written.append(p)

    cols, m = pearson_matrix(ds)
    p = out / "correlation.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", *cols])
        for c, row in zip(cols, m):
            w.writerow([c, *(_fmt(v) for v in row)])
    written.append(p)

    p = out / "grouped_stats.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["status", "column", "mean", "std"])
        for cls, stats in grouped_stats(ds).items():
            for c, s in stats.items():
                w.writerow([cls, c, _fmt(s["mean"]), _fmt(s["std"])])
    written.append(p)

    pairs = scatter_pairs or [
        ("packet_count", "carbon_emission_gCO2eq"),
        ("flow_duration", "energy_cost_usd"),
        ("byte_count", "power_consumption_watts"),
    ]
    p = out / "scatter_pairs.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_column", "y_column", "x", "y", "status"])
        for a, b in pairs:
            for xa, xb, s in zip(ds[a], ds[b], ds["status"]):
                w.writerow([a, b, xa, xb, int(s)])
    written.append(p)
    return written
