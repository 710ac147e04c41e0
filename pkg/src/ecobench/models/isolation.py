"""Isolation forest: anomalies are isolated by fewer random axis splits."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import DataError
from . import rng as keyed
from .base import Hyperparams, TrainedModel, check_features, coerce_hyperparams, harmonic, register_scorer
from .tree import LEAF, FlatTree, TreeBuilder, ensemble_apply, stack_trees


@lru_cache(maxsize=None)
def average_path_length(n: int) -> float:
    """c(n) = 2 H(n-1) - 2 (n-1) / n, with exact harmonic numbers; c(n<=1) = 0."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


def build_isolation_tree(X: np.ndarray, rows: np.ndarray, height_limit: int, seed: int, tree_index: int) -> FlatTree:
    b = TreeBuilder()
    root = b.add(0.0, 0, len(rows))
    stack = [(root, rows)]
    while stack:
        node, idx = stack.pop()
        depth = b.depth[node]
        if depth >= height_limit or len(idx) <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        r = keyed.keyed_rng(seed, keyed.SPLIT, tree_index, node)
        feat = int(splittable[r.integers(splittable.size)])
        thr = lo[feat] + r.random() * (hi[feat] - lo[feat])
        go_left = sub[:, feat] <= thr
        if go_left.all() or not go_left.any():
            # u rounded onto an endpoint; isolate the minimum instead
            thr = lo[feat]
            go_left = sub[:, feat] <= thr
        li, ri = idx[go_left], idx[~go_left]
        left = b.add(0.0, depth + 1, len(li))
        right = b.add(0.0, depth + 1, len(ri))
        b.split(node, feat, thr, left, right)
        stack.append((right, ri))
        stack.append((left, li))
    tree = b.build()
    # leaf value = path length estimate: depth plus c(size) for unresolved leaves
    leaf = tree.feature == LEAF
    tree.value[leaf] = tree.depth[leaf] + np.array([average_path_length(int(s)) for s in tree.n_samples[leaf]])
    return tree


def train_isolation_forest(X, y=None, hp: Hyperparams | dict | None = None, seed: int | None = None) -> TrainedModel:
    """Fit an isolation forest; labels only set the decision threshold.

    With labels, the threshold is the training-score quantile that flags the
    training anomaly fraction (unless ``contamination`` is given). Without
    labels or contamination the threshold is 0.5.
    """
    hp = coerce_hyperparams("isolation_forest", hp, seed)
    X = check_features(X)
    n, d = X.shape
    if n < 2:
        raise DataError(f"isolation forest needs at least 2 rows, got {n}")
    psi = min(hp["subsample"], n)
    height = math.ceil(math.log2(psi))
    trees = []
    for t in range(hp["n_trees"]):
        rows = keyed.keyed_rng(hp.seed, keyed.SUBSAMPLE, t).choice(n, psi, replace=False)
        trees.append(build_isolation_tree(X, np.sort(rows), height, hp.seed, t))
    state = stack_trees(trees)
    state["psi"] = psi
    model = TrainedModel(family="isolation_forest", state=state, n_features=d, hyperparams=hp)

    contamination = hp["contamination"]
    if contamination is None and y is not None:
        contamination = float(np.mean(np.asarray(y) == 1))
    threshold = 0.5
    if contamination is not None and 0.0 < contamination < 1.0:
        s = np.sort(_score(model, X))[::-1]
        n_flag = max(1, int(math.floor(contamination * n + 0.5)))
        threshold = float(s[n_flag - 1])
    return TrainedModel(
        family="isolation_forest",
        state=state,
        n_features=d,
        hyperparams=hp,
        threshold=threshold,
        metadata={"contamination": contamination},
    )


def mean_path_length(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    leaves = ensemble_apply(m.state, X)
    return m.state["value"][leaves].mean(axis=0)


@register_scorer("isolation_forest")
def _score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    c = average_path_length(int(m.state["psi"]))
    return np.power(2.0, -mean_path_length(m, X) / c)
