"""The five baseline detectors behind one score/predict contract."""

from __future__ import annotations

from .base import (
    DEFAULTS,
    FAMILIES,
    Hyperparams,
    TrainedModel,
    load_model,
    model_from_json,
    model_to_json,
    predict,
    save_model,
    score,
)
from .boosting import train_gbt
from .forest import feature_importances, train_random_forest
from .isolation import average_path_length, train_isolation_forest
from .logreg import train_logreg
from .svm import calibrate_platt, decision_function, train_svm_rbf

TRAINERS = {
    "logreg": train_logreg,
    "random_forest": train_random_forest,
    "gbt": train_gbt,
    "isolation_forest": train_isolation_forest,
    "svm_rbf": train_svm_rbf,
}


def train(family: str, X, y, hp=None, seed: int | None = None) -> TrainedModel:
    """Dispatch to the family trainer; ``hp`` may be a Hyperparams or an override dict."""
    if family not in TRAINERS:
        from ..errors import ParameterError

        raise ParameterError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    if family == "isolation_forest":
        return train_isolation_forest(X, y, hp, seed)
    return TRAINERS[family](X, y, hp, seed)


__all__ = [
    "DEFAULTS",
    "FAMILIES",
    "Hyperparams",
    "TRAINERS",
    "TrainedModel",
    "average_path_length",
    "calibrate_platt",
    "decision_function",
    "feature_importances",
    "load_model",
    "model_from_json",
    "model_to_json",
    "predict",
    "save_model",
    "score",
    "train",
    "train_gbt",
    "train_isolation_forest",
    "train_logreg",
    "train_random_forest",
    "train_svm_rbf",
]
