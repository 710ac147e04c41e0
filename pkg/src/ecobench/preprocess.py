"""Feature engineering, encoding, scaling, stratified splitting, SMOTE and PCA."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORICAL_COLUMNS, NUMERIC_COLUMNS, SUSTAINABILITY_COLUMNS, Dataset
from .errors import (
    DegenerateInputError,
    EncodingError,
    ParameterError,
    ShapeError,
    SmoteError,
    StratificationError,
)

ENGINEERED_COLUMNS = ("bytes_per_packet", "payload_entropy_x_size", "resource_util_sum", "power_per_vm")
# engineered columns computed from sustainability fields; dropped alongside them
_SUSTAINABILITY_DERIVED = ("power_per_vm",)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: np.ndarray
    columns: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be 2-d, got shape {self.values.shape}")
        if self.values.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.values.shape[0]} rows but {self.labels.shape[0]} labels")
        if self.values.shape[1] != len(self.columns):
            raise ShapeError(f"{self.values.shape[1]} value columns but {len(self.columns)} names")
        if len(set(self.columns)) != len(self.columns):
            raise ShapeError("column names must be unique")
        self.columns = list(self.columns)

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.values[rows], self.labels[rows], self.columns)

    def with_values(self, values: np.ndarray, columns: list[str] | None = None) -> "FeatureMatrix":
        return FeatureMatrix(values, self.labels, self.columns if columns is None else columns)


# ------------------------------------------------------------------ engineering

def engineer_features(ds: Dataset) -> Dataset:
    packets = ds["packet_count"].astype(np.float64)
    safe = np.where(packets == 0, 1.0, packets)
    bytes_per_packet = np.where(packets == 0, 0.0, ds["byte_count"] / safe)
    return ds.with_columns(
        {
            "bytes_per_packet": bytes_per_packet,
            "payload_entropy_x_size": ds["payload_entropy"] * ds["avg_pkt_size"],
            "resource_util_sum": ds["cpu_util"] + ds["mem_util"] + ds["disk_io_util"] + ds["net_io_util"],
            "power_per_vm": ds["power_consumption_watts"] / ds["vm_count"],
        }
    )


# ---------------------------------------------------------------------- encoding

@dataclass
class LabelEncoding:
    """Per-column category -> code maps, codes assigned in sorted order."""

    maps: dict[str, dict[str, int]] = field(default_factory=dict)

    @classmethod
    def fit(cls, ds: Dataset, columns=CATEGORICAL_COLUMNS) -> "LabelEncoding":
        return cls({c: {tok: i for i, tok in enumerate(sorted(set(ds[c].tolist())))} for c in columns})

    def transform_column(self, name: str, values: np.ndarray) -> np.ndarray:
        mapping = self.maps[name]
        out = np.empty(len(values), dtype=np.float64)
        for i, tok in enumerate(values.tolist()):
            try:
                out[i] = mapping[tok]
            except KeyError:
                raise EncodingError(f"unseen category {tok!r} in column {name!r}") from None
        return out


def feature_columns(ds: Dataset, exclude_sustainability: bool = False) -> list[str]:
    cols = [c for c in NUMERIC_COLUMNS]
    cols += [c for c in ENGINEERED_COLUMNS if c in ds.columns]
    cols += list(CATEGORICAL_COLUMNS)
    if exclude_sustainability:
        dropped = set(SUSTAINABILITY_COLUMNS) | set(_SUSTAINABILITY_DERIVED)
        cols = [c for c in cols if c not in dropped]
    return cols


def encode(
    ds: Dataset,
    exclude_sustainability: bool = False,
    encoding: LabelEncoding | None = None,
) -> tuple[FeatureMatrix, LabelEncoding]:
    """Turn a dataset into a numeric feature matrix plus the status labels.

    Categorical columns are replaced in place by their integer codes. Pass a
    previously fitted ``encoding`` to transform new data with the same codes.
    """
    if encoding is None:
        encoding = LabelEncoding.fit(ds)
    cols = feature_columns(ds, exclude_sustainability)
    values = np.empty((len(ds), len(cols)), dtype=np.float64)
    for j, c in enumerate(cols):
        if c in encoding.maps:
            values[:, j] = encoding.transform_column(c, ds[c])
        else:
            values[:, j] = ds[c]
    return FeatureMatrix(values, ds["status"].astype(np.int64), cols), encoding


# ----------------------------------------------------------------------- scaling

@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train: FeatureMatrix | np.ndarray) -> ScalerParams:
    X = train.values if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=float)
    return ScalerParams(X.mean(axis=0), X.std(axis=0))


def apply_scaler(m: FeatureMatrix, p: ScalerParams) -> FeatureMatrix:
    if m.values.shape[1] != p.mean.shape[0]:
        raise ShapeError(f"scaler fitted on {p.mean.shape[0]} columns, matrix has {m.values.shape[1]}")
    centered = m.values - p.mean
    safe = np.where(p.std > 0, p.std, 1.0)
    out = np.where(p.std > 0, centered / safe, 0.0)
    return m.with_values(out)


# --------------------------------------------------------------------- splitting

@dataclass
class SplitPair:
    train: FeatureMatrix
    test: FeatureMatrix
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int


def largest_remainder(counts: list[int], fraction: float) -> list[int]:
    """Apportion ``round(sum(counts) * fraction)`` across classes.

    Each class gets the floor of its quota; leftover units go to the largest
    fractional remainders, ties to the lower class index.
    """
    total = int(math.floor(sum(counts) * fraction + 0.5))
    quotas = [c * fraction for c in counts]
    alloc = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: max(0, total - sum(alloc))]:
        alloc[i] += 1
    return alloc


def stratified_split(m: FeatureMatrix, test_fraction: float = 0.2, seed: int = 0) -> SplitPair:
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    classes = np.unique(m.labels)
    if len(classes) < 2:
        raise StratificationError("stratified split needs both classes present")
    members = [np.flatnonzero(m.labels == c) for c in classes]
    small = [int(c) for c, idx in zip(classes, members) if len(idx) < 2]
    if small:
        raise StratificationError(f"class(es) {small} have fewer than 2 members")
    alloc = largest_remainder([len(idx) for idx in members], test_fraction)
    rng = np.random.default_rng(seed)
    test_parts = []
    for idx, t in zip(members, alloc):
        test_parts.append(idx[rng.permutation(len(idx))[:t]])
    is_test = np.zeros(len(m), dtype=bool)
    is_test[np.concatenate(test_parts)] = True
    test_idx = np.flatnonzero(is_test)
    train_idx = np.flatnonzero(~is_test)
    return SplitPair(m.take(train_idx), m.take(test_idx), train_idx, test_idx, seed)


# ------------------------------------------------------------------------- SMOTE

def minority_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points (Euclidean), nearest first.

    Distance ties go to the lower index so the result is deterministic.
    """
    sq = np.sum(points**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def smote(
    train: FeatureMatrix,
    k: int = 5,
    seed: int = 0,
    *,
    gap: float | None = None,
) -> FeatureMatrix:
    """Oversample the minority class until both classes have equal counts.

    Synthetic rows are appended after the original rows, which are returned
    unchanged. ``gap`` pins the interpolation factor instead of drawing it,
    which is only useful for testing.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    y = train.labels
    counts = {c: int(np.sum(y == c)) for c in (0, 1)}
    minority = min(counts, key=lambda c: (counts[c], -c))
    majority = 1 - minority
    n_new = counts[majority] - counts[minority]
    if n_new == 0:
        return train
    min_idx = np.flatnonzero(y == minority)
    if len(min_idx) < 2:
        raise SmoteError(f"minority class {minority} has {len(min_idx)} member(s); SMOTE needs at least 2")
    pts = train.values[min_idx]
    nn = minority_neighbors(pts, min(k, len(pts) - 1))
    rng = np.random.default_rng(seed)
    base = rng.integers(0, len(pts), n_new)
    pick = rng.integers(0, nn.shape[1], n_new)
    lam = rng.random(n_new) if gap is None else np.full(n_new, float(gap))
    x = pts[base]
    x_nn = pts[nn[base, pick]]
    synthetic = x + lam[:, None] * (x_nn - x)
    values = np.vstack([train.values, synthetic])
    labels = np.concatenate([y, np.full(n_new, minority, dtype=np.int64)])
    return FeatureMatrix(values, labels, train.columns)


# --------------------------------------------------------------------------- PCA

def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns, in
    no particular order.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def components_for_threshold(eigenvalues: np.ndarray, threshold: float) -> int:
    """Smallest k whose leading eigenvalues reach ``threshold`` of the total."""
    ev = np.asarray(eigenvalues, dtype=float)
    ratios = np.cumsum(ev) / ev.sum()
    hits = np.flatnonzero(ratios >= threshold)
    return int(hits[0]) + 1 if hits.size else len(ev)


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # d x k, orthonormal columns
    eigenvalues: np.ndarray  # k retained, descending
    all_eigenvalues: np.ndarray  # d, descending
    retained_variance_ratio: float

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return self.mean + z @ self.components.T


def pca_fit(train: FeatureMatrix | np.ndarray, variance_threshold: float = 0.9) -> PCAModel:
    if not 0.0 < variance_threshold <= 1.0:
        raise ParameterError(f"variance_threshold must lie in (0, 1], got {variance_threshold}")
    X = train.values if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=float)
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / X.shape[0]
    if not np.any(cov):
        raise DegenerateInputError("PCA input has zero variance (all rows identical)")
    vals, vecs = jacobi_eigh(cov)
    vals = np.maximum(vals, 0.0)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    # sign convention: largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    k = components_for_threshold(vals, variance_threshold)
    ratio = float(vals[:k].sum() / vals.sum())
    return PCAModel(mean, vecs[:, :k].copy(), vals[:k].copy(), vals, ratio)


def pca_transform(p: PCAModel, m: FeatureMatrix) -> FeatureMatrix:
    if m.values.shape[1] != p.mean.shape[0]:
        raise ShapeError(f"PCA fitted on {p.mean.shape[0]} columns, matrix has {m.values.shape[1]}")
    z = (m.values - p.mean) @ p.components
    return m.with_values(z, [f"pc{i + 1}" for i in range(p.n_components)])
