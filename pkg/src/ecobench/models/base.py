"""Uniform contract shared by every detector family.

A :class:`TrainedModel` is a family tag plus a flat ``state`` dict of numpy
arrays and scalars; each family module registers a scorer that maps
``(state, X)`` to anomaly scores in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError

FAMILIES = ("logreg", "random_forest", "gbt", "isolation_forest", "svm_rbf")

# (default, validator) per key; validators return an error string or None
_POS = lambda v: None if isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 else "must be > 0"
_NONNEG = lambda v: None if isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 else "must be >= 0"


def _int_at_least(lo):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < lo:
            return f"must be an integer >= {lo}"
        return None

    return check


def _max_features(v):
    if v in ("sqrt", "log2", "all"):
        return None
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1:
        return None
    if isinstance(v, float) and 0.0 < v <= 1.0:
        return None
    return "must be 'sqrt', 'log2', 'all', an integer >= 1 or a fraction in (0, 1]"


def _gamma(v):
    if v == "scale":
        return None
    return _POS(v)


def _contamination(v):
    if v is None or (isinstance(v, float) and 0.0 < v < 1.0):
        return None
    return "must be None or a fraction in (0, 1)"


DEFAULTS: dict[str, dict[str, tuple[Any, Callable]]] = {
    "logreg": {
        "learning_rate": (0.1, _POS),
        "epochs": (500, _int_at_least(1)),
        "l2": (1e-4, _NONNEG),
    },
    "random_forest": {
        "n_trees": (100, _int_at_least(1)),
        "max_depth": (12, _int_at_least(1)),
        "min_samples_split": (2, _int_at_least(2)),
        "max_features": ("sqrt", _max_features),
    },
    "gbt": {
        "eta": (0.1, _POS),
        "max_depth": (3, _int_at_least(1)),
        "n_rounds": (100, _int_at_least(0)),
        "lambda": (1.0, _NONNEG),
        "min_child_weight": (1.0, _NONNEG),
    },
    "isolation_forest": {
        "n_trees": (100, _int_at_least(1)),
        "subsample": (256, _int_at_least(2)),
        "contamination": (None, _contamination),
    },
    "svm_rbf": {
        "C": (1.0, _POS),
        "gamma": ("scale", _gamma),
        "tol": (1e-3, _POS),
        "max_passes": (10, _int_at_least(1)),
        "max_iter": (200, _int_at_least(1)),
    },
}


@dataclass(frozen=True)
class Hyperparams:
    family: str
    values: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def make(cls, family: str, overrides: dict | None = None, seed: int = 0) -> "Hyperparams":
        """Merge ``overrides`` onto the family defaults and validate every value."""
        if family not in DEFAULTS:
            raise ParameterError(f"unknown model family {family!r}; expected one of {FAMILIES}")
        spec = DEFAULTS[family]
        overrides = dict(overrides or {})
        unknown = sorted(set(overrides) - set(spec))
        if unknown:
            raise ParameterError(f"{family}: unknown hyperparameter(s) {unknown}; allowed {sorted(spec)}")
        values = {k: overrides.get(k, d) for k, (d, _) in spec.items()}
        for k, v in values.items():
            if isinstance(v, np.integer):
                values[k] = v = int(v)
            problem = spec[k][1](v)
            if problem:
                raise ParameterError(f"{family}: {k}={v!r} {problem}")
        return cls(family, values, int(seed))

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self) -> str:
        return ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.values.items()))


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def coerce_hyperparams(family: str, hp, seed: int | None) -> Hyperparams:
    if isinstance(hp, Hyperparams):
        if hp.family != family:
            raise ParameterError(f"hyperparams for {hp.family!r} passed to {family!r} trainer")
        return hp if seed is None else Hyperparams(hp.family, dict(hp.values), int(seed))
    return Hyperparams.make(family, hp, 0 if seed is None else seed)


@dataclass(frozen=True)
class TrainedModel:
    family: str
    state: dict
    n_features: int
    hyperparams: Hyperparams
    platt: tuple[float, float] | None = None
    threshold: float = 0.5
    metadata: dict = field(default_factory=dict)


_SCORERS: dict[str, Callable[[TrainedModel, np.ndarray], np.ndarray]] = {}


def register_scorer(family: str):
    def deco(fn):
        _SCORERS[family] = fn
        return fn

    return deco


def check_features(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"X must be 2-d, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"model expects {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NumericError("X contains non-finite values")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.all(np.isin(y, (0, 1))):
        raise ParameterError("labels must be 0/1")
    return y.astype(np.int64)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def score(m: TrainedModel, X) -> np.ndarray:
    """Anomaly scores in [0, 1]; larger means more anomalous."""
    X = check_features(X, m.n_features)
    s = _SCORERS[m.family](m, X)
    return np.clip(s, 0.0, 1.0)


def predict(m: TrainedModel, X, threshold: float | None = None) -> np.ndarray:
    """Label 1 iff score >= threshold (ties are flagged as anomalies).

    ``threshold=None`` uses the model's own decision threshold: 0.5 for the
    supervised families, the contamination quantile for isolation forests.
    """
    t = m.threshold if threshold is None else threshold
    return (score(m, X) >= t).astype(np.int64)


# ----------------------------------------------------------------- serialization

FORMAT_NAME = "ecobench-model"
FORMAT_VERSION = 1


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": str(obj.dtype), "shape": list(obj.shape), "data": obj.ravel().tolist()}
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["data"], dtype=obj["__ndarray__"]).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def model_to_json(m: TrainedModel) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "family": m.family,
        "n_features": m.n_features,
        "hyperparams": {"values": m.hyperparams.values, "seed": m.hyperparams.seed},
        "platt": list(m.platt) if m.platt is not None else None,
        "threshold": m.threshold,
        "metadata": _encode(m.metadata),
        "state": _encode(m.state),
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> TrainedModel:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ParameterError(f"not an {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ParameterError(f"unsupported model format version {doc.get('version')!r}")
    hp = Hyperparams(doc["family"], doc["hyperparams"]["values"], doc["hyperparams"]["seed"])
    platt = tuple(doc["platt"]) if doc["platt"] is not None else None
    return TrainedModel(
        family=doc["family"],
        state=_decode(doc["state"]),
        n_features=doc["n_features"],
        hyperparams=hp,
        platt=platt,
        threshold=doc["threshold"],
        metadata=_decode(doc["metadata"]),
    )


def save_model(m: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(model_to_json(m), encoding="utf-8")
    return path


def load_model(path: str | Path) -> TrainedModel:
    return model_from_json(Path(path).read_text(encoding="utf-8"))


def harmonic(n: int) -> float:
    return math.fsum(1.0 / i for i in range(1, n + 1))
