"""Random forest of bootstrap CART trees with Gini splits."""

from __future__ import annotations

import math

import numpy as np

from . import rng as keyed
from .base import Hyperparams, TrainedModel, check_features, check_labels, coerce_hyperparams, register_scorer
from .tree import LEAF, FlatTree, ensemble_apply, midpoint, stack_trees


def resolve_max_features(spec, d: int) -> int:
    if spec == "sqrt":
        m = int(math.sqrt(d))
    elif spec == "log2":
        m = int(math.log2(d)) if d > 1 else 1
    elif spec == "all":
        m = d
    elif isinstance(spec, float):
        m = int(spec * d)
    else:
        m = int(spec)
    return min(d, max(1, m))


def best_gini_split(xs: np.ndarray, ys: np.ndarray, keys: np.ndarray):
    """Best Gini split over the candidate columns of ``xs`` (n x m).

    Returns ``(column, threshold, impurity_decrease)`` or ``None`` when every
    candidate column is constant. Among equal-quality splits the column with
    the smallest identity key wins, then the smallest threshold.
    """
    n = xs.shape[0]
    order = np.argsort(xs, axis=0, kind="stable")
    sx = np.take_along_axis(xs, order, axis=0)
    sy = ys[order]
    pos_left = np.cumsum(sy, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    total_pos = sy.sum(axis=0)
    pos_right = total_pos - pos_left
    neg_left = n_left - pos_left
    neg_right = n_right - pos_right
    # maximizing this equals minimizing the size-weighted child Gini impurity
    purity = (pos_left**2 + neg_left**2) / n_left + (pos_right**2 + neg_right**2) / n_right
    valid = sx[:-1] < sx[1:]
    purity = np.where(valid, purity, -np.inf)
    best_row = np.argmax(purity, axis=0)
    best_val = purity[best_row, np.arange(xs.shape[1])]
    if not np.isfinite(best_val).any():
        return None
    top = best_val.max()
    tied = np.flatnonzero(best_val == top)
    col = tied[np.argmin(keys[tied])]
    r = best_row[col]
    P = float(total_pos[0])
    parent = (P**2 + (n - P) ** 2) / n
    return int(col), midpoint(sx[r, col], sx[r + 1, col]), float(top - parent)


def _vector_midpoint(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = 0.5 * (lo + hi)
    return np.where(mid >= hi, lo, mid)


def _group_order(group: np.ndarray, n_groups: int) -> np.ndarray:
    """Stable permutation that sorts by group index."""
    if n_groups < 1 << 16:
        group = group.astype(np.uint16)  # stable sort of uint16 is a radix sort
    return np.argsort(group, kind="stable")


def _node_value_order(v: np.ndarray, node: np.ndarray, n_groups: int) -> np.ndarray:
    """Permutation sorting by node, then by value (a faster lexsort)."""
    by_value = np.argsort(v)
    return by_value[_group_order(node[by_value], n_groups)]


def build_gini_tree(
    X: np.ndarray,
    y: np.ndarray,
    *,
    max_depth: int,
    min_samples_split: int,
    n_candidates: int,
    column_keys: np.ndarray,
    seed: int,
    tree_index: int,
    importances: np.ndarray,
) -> FlatTree:
    """Grow one CART tree breadth-first, splitting a whole level per step.

    Rows of ``X`` are the (bootstrap) training sample. Node ids follow
    breadth-first creation order; each node draws its candidate columns
    from a counter-based hash of (seed, tree, node, column identity), so a
    consistent column permutation selects the same features. Among
    equal-quality splits the smallest column identity wins, then the
    smallest threshold.
    """
    N, d = X.shape
    yf = y.astype(np.float64)
    cap = 2 * N + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    depth_arr = np.zeros(cap, dtype=np.int64)
    n_samples = np.zeros(cap, dtype=np.int64)
    value[0], n_samples[0] = yf.mean(), N
    n_nodes = 1

    # rows of the current frontier, grouped by frontier position ``ci``
    rows = np.arange(N)
    ci = np.zeros(N, dtype=np.int64)
    frontier = np.array([0], dtype=np.int64)
    for depth in range(max_depth):
        F = len(frontier)
        cnt = np.bincount(ci, minlength=F)
        pos = np.bincount(ci, weights=yf[rows], minlength=F)
        splittable = (cnt >= min_samples_split) & (pos > 0) & (pos < cnt)
        if not splittable.any():
            break
        if not splittable.all():
            keep = splittable[ci]
            rows, ci = rows[keep], (np.cumsum(splittable) - 1)[ci[keep]]
        node_ids = frontier[splittable]
        seg_n = cnt[splittable].astype(np.float64)
        seg_pos = pos[splittable]
        K, P = len(node_ids), len(rows)
        starts = np.concatenate([[0], np.cumsum(seg_n[:-1]).astype(np.int64)])
        offset = np.arange(P) - starts[ci]

        priority = keyed.counter_uniform(seed, keyed.FEATURES, tree_index, node_ids[:, None], column_keys[None, :])
        cand = np.argsort(priority, axis=1, kind="stable")[:, :n_candidates]

        best = np.full((K, n_candidates), -np.inf)
        best_thr = np.zeros((K, n_candidates))
        for j in range(n_candidates):
            v = X[rows, cand[ci, j]]
            o = _node_value_order(v, ci, K)
            sv, sy = v[o], yf[rows[o]]
            cum = np.cumsum(sy)
            pl = cum - (cum - sy)[starts][ci]
            nl = offset + 1.0
            nr = seg_n[ci] - nl
            pr = seg_pos[ci] - pl
            valid = np.zeros(P, dtype=bool)
            valid[:-1] = (ci[:-1] == ci[1:]) & (sv[:-1] < sv[1:])
            with np.errstate(divide="ignore", invalid="ignore"):
                # maximizing this equals minimizing the size-weighted child Gini
                purity = (pl**2 + (nl - pl) ** 2) / nl + (pr**2 + (nr - pr) ** 2) / nr
            purity = np.where(valid, purity, -np.inf)
            seg_max = np.maximum.reduceat(purity, starts)
            at_max = valid & (purity == seg_max[ci])
            first = np.minimum.reduceat(np.where(at_max, np.arange(P), P - 1), starts)
            best[:, j] = seg_max
            best_thr[:, j] = _vector_midpoint(sv[first], sv[np.minimum(first + 1, P - 1)])

        top = best.max(axis=1)
        ok = np.isfinite(top)
        if not ok.any():
            break
        tied = best == top[:, None]
        jsel = np.argmin(np.where(tied, column_keys[cand], d), axis=1)
        kk = np.arange(K)
        feat = cand[kk, jsel]
        thr = best_thr[kk, jsel]
        parent = (seg_pos**2 + (seg_n - seg_pos) ** 2) / seg_n
        np.add.at(importances, feat[ok], (top - parent)[ok])

        split_nodes = node_ids[ok]
        n_split = len(split_nodes)
        lid = n_nodes + 2 * np.arange(n_split)
        feature[split_nodes] = feat[ok]
        threshold[split_nodes] = thr[ok]
        left[split_nodes] = lid
        right[split_nodes] = lid + 1

        moving = ok[ci]
        rows, c = rows[moving], ci[moving]
        go_left = X[rows, feat[c]] <= thr[c]
        rank = np.cumsum(ok) - 1
        kids = 2 * rank[c] + (~go_left)
        n_children = 2 * n_split
        order = _group_order(kids, n_children)
        rows, ci = rows[order], kids[order]
        kcnt = np.bincount(ci, minlength=n_children)
        kpos = np.bincount(ci, weights=yf[rows], minlength=n_children)
        sl = slice(n_nodes, n_nodes + n_children)
        n_samples[sl] = kcnt
        value[sl] = kpos / kcnt
        depth_arr[sl] = depth + 1
        frontier = np.arange(n_nodes, n_nodes + n_children)
        n_nodes += n_children

    return FlatTree(
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        value=value[:n_nodes].copy(),
        depth=depth_arr[:n_nodes].copy(),
        n_samples=n_samples[:n_nodes].copy(),
    )


def train_random_forest(
    X,
    y,
    hp: Hyperparams | dict | None = None,
    seed: int | None = None,
    *,
    column_keys=None,
) -> TrainedModel:
    """Fit a bootstrap forest of Gini trees.

    ``column_keys`` gives each column a stable identity (a permutation of
    ``range(d)``, default the column positions). Feature sampling and split
    tie-breaks follow the identities rather than the positions.
    """
    hp = coerce_hyperparams("random_forest", hp, seed)
    X = check_features(X)
    y = check_labels(y, X.shape[0])
    n, d = X.shape
    keys = np.arange(d) if column_keys is None else np.asarray(column_keys, dtype=np.int64)
    if sorted(keys.tolist()) != list(range(d)):
        raise ValueError("column_keys must be a permutation of range(n_features)")
    m = resolve_max_features(hp["max_features"], d)
    importances = np.zeros(d)
    trees = []
    for t in range(hp["n_trees"]):
        rows = keyed.keyed_rng(hp.seed, keyed.BOOTSTRAP, t).integers(0, n, n)
        trees.append(
            build_gini_tree(
                X[rows],
                y[rows],
                max_depth=hp["max_depth"],
                min_samples_split=hp["min_samples_split"],
                n_candidates=m,
                column_keys=keys,
                seed=hp.seed,
                tree_index=t,
                importances=importances,
            )
        )
    total = importances.sum()
    state = stack_trees(trees)
    state["feature_importances"] = importances / total if total > 0 else importances
    return TrainedModel(family="random_forest", state=state, n_features=d, hyperparams=hp)


@register_scorer("random_forest")
def _score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    leaves = ensemble_apply(m.state, X)
    return m.state["value"][leaves].mean(axis=0)


def feature_importances(m: TrainedModel) -> np.ndarray:
    return np.asarray(m.state["feature_importances"])
