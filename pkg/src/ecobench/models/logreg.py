"""L2-regularized logistic regression trained by full-batch gradient descent."""

from __future__ import annotations

import numpy as np

from .base import Hyperparams, TrainedModel, check_features, check_labels, coerce_hyperparams, register_scorer, sigmoid


def loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean log-loss plus ``l2/2 * |w|^2`` (the bias is not penalized)."""
    z = X @ w + b
    # log(1 + e^z) - y z, written to stay finite for large |z|
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    r = sigmoid(X @ w + b) - y
    n = X.shape[0]
    return X.T @ r / n + l2 * w, float(r.sum() / n)


def train_logreg(X, y, hp: Hyperparams | dict | None = None, seed: int | None = None) -> TrainedModel:
    hp = coerce_hyperparams("logreg", hp, seed)
    X = check_features(X)
    y = check_labels(y, X.shape[0]).astype(np.float64)
    lr, l2 = hp["learning_rate"], hp["l2"]
    w = np.zeros(X.shape[1])
    b = 0.0
    prev = loss(w, b, X, y, l2)
    history = [prev]
    for _ in range(hp["epochs"]):
        gw, gb = gradient(w, b, X, y, l2)
        w = w - lr * gw
        b = b - lr * gb
        cur = loss(w, b, X, y, l2)
        history.append(cur)
        if abs(prev - cur) < 1e-8:
            break
        prev = cur
    return TrainedModel(
        family="logreg",
        state={"weights": w, "bias": b},
        n_features=X.shape[1],
        hyperparams=hp,
        metadata={"epochs_run": len(history) - 1, "final_loss": history[-1]},
    )


@register_scorer("logreg")
def _score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    return sigmoid(X @ m.state["weights"] + m.state["bias"])
