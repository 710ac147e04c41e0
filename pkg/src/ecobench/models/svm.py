"""RBF-kernel support vector machine trained with simplified SMO, plus Platt scaling."""

from __future__ import annotations

import math

import numpy as np

from ..errors import CalibrationError, ParameterError
from . import rng as keyed
from .base import Hyperparams, TrainedModel, check_features, check_labels, coerce_hyperparams, register_scorer

_ALPHA_STEP_MIN = 1e-10  # relative to C


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def resolve_gamma(spec, X: np.ndarray) -> float:
    if spec == "scale":
        var = float(X.var())
        return 1.0 / (X.shape[1] * var) if var > 0 else 1.0
    return float(spec)


def _snap(a: float, C: float) -> float:
    eps = 1e-12 * C
    if a < eps:
        return 0.0
    if a > C - eps:
        return C
    return a


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_passes: int, max_iter: int, rng: np.random.Generator):
    """Simplified SMO on a precomputed kernel matrix; ``y`` in {-1, +1}.

    Each KKT violator is paired with a random partner. After a sweep in which
    no random pair moved, violators are instead paired with the first point,
    in order of decreasing |E_i - E_j|, that lets the pair move.
    Stops after ``max_passes`` consecutive sweeps without an update, or after
    ``max_iter`` sweeps in total. Errors ``f(x_i) - y_i`` are kept in a cache
    updated incrementally after every pair step.
    """
    n = len(y)
    alpha = np.zeros(n)
    b = 0.0
    E = -y.astype(np.float64)  # f = 0 initially
    diag = np.diag(K).copy()

    def violates(i: int) -> bool:
        r = y[i] * E[i]
        return (r < -tol and alpha[i] < C) or (r > tol and alpha[i] > 0)

    def step(i: int, j: int) -> bool:
        nonlocal b
        Ei, Ej = E[i], E[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            L, H = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            L, H = max(0.0, ai + aj - C), min(C, ai + aj)
        if L == H:
            return False
        eta = 2.0 * K[i, j] - diag[i] - diag[j]
        if eta >= 0:
            return False
        aj_new = min(H, max(L, aj - y[j] * (Ei - Ej) / eta))
        if abs(aj_new - aj) < _ALPHA_STEP_MIN * C:
            return False
        ai_new = ai + y[i] * y[j] * (aj - aj_new)
        # round-off can leave a multiplier a hair outside the box
        ai_new = _snap(ai_new, C)
        aj_new = _snap(aj_new, C)
        di, dj = ai_new - ai, aj_new - aj
        b1 = b - Ei - y[i] * di * diag[i] - y[j] * dj * K[i, j]
        b2 = b - Ej - y[i] * di * K[i, j] - y[j] * dj * diag[j]
        if 0 < ai_new < C:
            b_new = b1
        elif 0 < aj_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        alpha[i], alpha[j] = ai_new, aj_new
        E[:] += y[i] * di * K[i] + y[j] * dj * K[j] + (b_new - b)
        b = b_new
        return True

    passes = sweeps = 0
    while passes < max_passes and sweeps < max_iter:
        changed = 0
        thorough = passes > 0
        js = rng.integers(0, n - 1, n)
        for i in range(n):
            if not violates(i):
                continue
            j = int(js[i])
            j += j >= i
            if step(i, j):
                changed += 1
                continue
            if not thorough:
                continue
            for j in np.argsort(-np.abs(E[i] - E), kind="stable"):
                if j != i and step(i, int(j)):
                    changed += 1
                    break
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0
    converged = not any(violates(i) for i in range(n))
    return alpha, b, {"sweeps": sweeps, "converged": converged}


def calibrate_platt(raw_scores, y, max_iter: int = 200) -> tuple[float, float]:
    """Fit (A, B) so that 1 / (1 + exp(A f + B)) estimates P(y = 1 | f).

    Damped Newton on the mean cross-entropy with a tiny ridge for
    separable or constant inputs; steps are halved until the loss drops.
    """
    f = np.asarray(raw_scores, dtype=np.float64)
    t = np.asarray(y, dtype=np.float64)
    n1 = float(t.sum())
    n0 = len(t) - n1
    if n1 == 0 or n0 == 0:
        raise CalibrationError("Platt calibration needs both classes present")
    ridge = 1e-12

    def objective(A, B):
        z = A * f + B
        # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
        return float(np.mean(np.logaddexp(0.0, z) - (1.0 - t) * z))

    A, B = 0.0, math.log((n0 + 1.0) / (n1 + 1.0))
    fval = objective(A, B)
    for _ in range(max_iter):
        z = A * f + B
        p = 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))
        d1 = t - p  # dF/dz per sample
        gA, gB = float(np.mean(d1 * f)), float(np.mean(d1))
        w = p * (1.0 - p)
        hAA = float(np.mean(w * f * f)) + ridge
        hBB = float(np.mean(w)) + ridge
        hAB = float(np.mean(w * f))
        if abs(gA) < 1e-13 and abs(gB) < 1e-13:
            break
        det = hAA * hBB - hAB * hAB
        dA = -(hBB * gA - hAB * gB) / det
        dB = -(-hAB * gA + hAA * gB) / det
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nval = objective(nA, nB)
            if nval < fval + 1e-4 * step * (gA * dA + gB * dB):
                break
            step *= 0.5
        else:
            break
        A, B, fval = nA, nB, nval
    return A, B


def platt_transform(raw_scores, A: float, B: float) -> np.ndarray:
    z = A * np.asarray(raw_scores, dtype=np.float64) + B
    return 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))


def train_svm_rbf(X, y, hp: Hyperparams | dict | None = None, seed: int | None = None, *, calibrate: bool = True) -> TrainedModel:
    hp = coerce_hyperparams("svm_rbf", hp, seed)
    if hp["C"] <= 0:
        raise ParameterError("C must be > 0")
    X = check_features(X)
    y01 = check_labels(y, X.shape[0])
    ys = np.where(y01 == 1, 1.0, -1.0)
    gamma = resolve_gamma(hp["gamma"], X)
    K = rbf_kernel(X, X, gamma)
    rng = keyed.keyed_rng(hp.seed, keyed.SPLIT)
    alpha, b, info = smo(K, ys, hp["C"], hp["tol"], hp["max_passes"], hp["max_iter"], rng)
    sv = alpha > 0
    state = {
        "support_vectors": X[sv],
        "dual_coef": alpha[sv] * ys[sv],
        "alpha": alpha,
        "bias": b,
        "gamma": gamma,
    }
    decision = K[:, sv] @ state["dual_coef"] + b
    platt = None
    if calibrate and len(np.unique(y01)) == 2:
        platt = calibrate_platt(decision, y01)
    return TrainedModel(
        family="svm_rbf",
        state=state,
        n_features=X.shape[1],
        hyperparams=hp,
        platt=platt,
        metadata={"n_support": int(sv.sum()), **info},
    )


def decision_function(m: TrainedModel, X) -> np.ndarray:
    X = check_features(X, m.n_features)
    sv = m.state["support_vectors"]
    if len(sv) == 0:
        return np.full(X.shape[0], float(m.state["bias"]))
    return rbf_kernel(X, sv, m.state["gamma"]) @ m.state["dual_coef"] + m.state["bias"]


@register_scorer("svm_rbf")
def _score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    f = decision_function(m, X)
    if m.platt is None:
        return 1.0 / (1.0 + np.exp(-np.clip(f, -700, 700)))
    return platt_transform(f, *m.platt)
