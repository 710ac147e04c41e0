"""Gradient-boosted regression trees on the logistic loss (second-order splits)."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError
from .base import Hyperparams, TrainedModel, check_features, check_labels, coerce_hyperparams, register_scorer, sigmoid
from .tree import FlatTree, TreeBuilder, ensemble_apply, midpoint, stack_trees

_PRIOR_CLIP = 1e-6


def split_gain(GL, HL, GR, HR, lam):
    """Loss reduction of a split: 1/2 [GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)]."""
    G, H = GL + GR, HL + HR
    return 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))


def leaf_weight(G, H, lam):
    return -G / (H + lam)


def build_newton_tree(
    X: np.ndarray,
    presorted: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    *,
    max_depth: int,
    lam: float,
    min_child_weight: float,
    column_keys: np.ndarray,
) -> FlatTree:
    n, d = X.shape
    b = TreeBuilder()
    root_rows = np.arange(n)
    root = b.add(leaf_weight(g.sum(), h.sum(), lam), 0, n)
    stack = [(root, root_rows)]
    key_order = np.argsort(column_keys, kind="stable")
    while stack:
        node, idx = stack.pop()
        depth = b.depth[node]
        if depth >= max_depth or len(idx) < 2:
            continue
        G, H = g[idx].sum(), h[idx].sum()
        member = np.zeros(n, dtype=bool)
        member[idx] = True
        sel = member[presorted]  # n x d
        rows_sorted = presorted.T[sel.T].reshape(d, len(idx)).T  # per-column sorted node rows
        sx = X[rows_sorted, np.arange(d)[None, :]]
        GL = np.cumsum(g[rows_sorted], axis=0)[:-1]
        HL = np.cumsum(h[rows_sorted], axis=0)[:-1]
        GR, HR = G - GL, H - HL
        ok = (sx[:-1] < sx[1:]) & (HL >= min_child_weight) & (HR >= min_child_weight)
        gain = np.where(ok, split_gain(GL, HL, GR, HR, lam), -np.inf)
        best_row = np.argmax(gain, axis=0)
        best = gain[best_row, np.arange(d)]
        top = best.max()
        if not (np.isfinite(top) and top > 0.0):
            continue
        # ties: smallest column identity, then smallest threshold
        col = next(int(c) for c in key_order if best[c] == top)
        r = best_row[col]
        thr = midpoint(sx[r, col], sx[r + 1, col])
        go_left = X[idx, col] <= thr
        li, ri = idx[go_left], idx[~go_left]
        left = b.add(leaf_weight(g[li].sum(), h[li].sum(), lam), depth + 1, len(li))
        right = b.add(leaf_weight(g[ri].sum(), h[ri].sum(), lam), depth + 1, len(ri))
        b.split(node, col, thr, left, right)
        stack.append((right, ri))
        stack.append((left, li))
    return b.build()


def train_gbt(X, y, hp: Hyperparams | dict | None = None, seed: int | None = None, *, column_keys=None) -> TrainedModel:
    """Boost depth-limited Newton trees on the logistic loss.

    The base margin is the log-odds of the training positive rate. Training
    is deterministic; ``seed`` is recorded but there is no sampling.
    """
    hp = coerce_hyperparams("gbt", hp, seed)
    if hp["eta"] <= 0:
        raise ParameterError("eta must be > 0")
    X = check_features(X)
    y = check_labels(y, X.shape[0]).astype(np.float64)
    n, d = X.shape
    keys = np.arange(d) if column_keys is None else np.asarray(column_keys, dtype=np.int64)
    prior = float(np.clip(y.mean(), _PRIOR_CLIP, 1.0 - _PRIOR_CLIP))
    base = math.log(prior / (1.0 - prior))
    presorted = np.argsort(X, axis=0, kind="stable")
    margin = np.full(n, base)
    eta = hp["eta"]
    trees = []
    for _ in range(hp["n_rounds"]):
        p = sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = build_newton_tree(
            X,
            presorted,
            g,
            h,
            max_depth=hp["max_depth"],
            lam=hp["lambda"],
            min_child_weight=hp["min_child_weight"],
            column_keys=keys,
        )
        trees.append(tree)
        margin = margin + eta * tree.predict_value(X)
    state = stack_trees(trees)
    state["base_margin"] = base
    state["eta"] = eta
    return TrainedModel(family="gbt", state=state, n_features=d, hyperparams=hp)


def margins(m: TrainedModel, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
    """Raw boosted margin, optionally using only the first ``n_trees`` trees."""
    X = check_features(X, m.n_features)
    offsets = np.asarray(m.state["offsets"])
    total = len(offsets) - 1
    k = total if n_trees is None else min(n_trees, total)
    out = np.full(X.shape[0], float(m.state["base_margin"]))
    if k == 0:
        return out
    sub = dict(m.state)
    sub["offsets"] = offsets[: k + 1]
    leaves = ensemble_apply(sub, X)
    return out + m.state["eta"] * m.state["value"][leaves].sum(axis=0)


@register_scorer("gbt")
def _score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    return sigmoid(margins(m, X))
