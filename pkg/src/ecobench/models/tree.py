"""Array-backed binary trees shared by the forest and boosting families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class FlatTree:
    """Nodes stored as parallel arrays; ``feature == LEAF`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_samples: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_state(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_state(cls, state: dict) -> "FlatTree":
        return cls(**{k: np.asarray(state[k]) for k in cls.__dataclass_fields__})


class TreeBuilder:
    """Accumulates nodes in creation order, then freezes them into a FlatTree."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.depth: list[int] = []
        self.n_samples: list[int] = []

    def add(self, value: float, depth: int, n_samples: int) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        self.depth.append(depth)
        self.n_samples.append(int(n_samples))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.left[node] = left
        self.right[node] = right

    def build(self) -> FlatTree:
        return FlatTree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=np.float64),
            depth=np.array(self.depth, dtype=np.int64),
            n_samples=np.array(self.n_samples, dtype=np.int64),
        )


def midpoint(lo: float, hi: float) -> float:
    mid = 0.5 * (lo + hi)
    return lo if mid >= hi else mid


def stack_trees(trees: list[FlatTree]) -> dict:
    """Concatenate trees into one state dict.

    Child pointers become global node indices; ``offsets[t]`` is the root of
    tree ``t``.
    """
    sizes = [t.n_nodes for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    out = {"offsets": offsets}
    for k in FlatTree.__dataclass_fields__:
        parts = []
        for t, off in zip(trees, offsets[:-1]):
            arr = getattr(t, k)
            if k in ("left", "right"):
                arr = np.where(arr == LEAF, LEAF, arr + off)
            parts.append(arr)
        dtype = np.float64 if k in ("threshold", "value") else np.int64
        out[k] = np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)
    return out


def unstack_trees(state: dict) -> list[FlatTree]:
    offs = np.asarray(state["offsets"])
    trees = []
    for a, b in zip(offs[:-1], offs[1:]):
        parts = {k: np.asarray(state[k][a:b]) for k in FlatTree.__dataclass_fields__}
        for k in ("left", "right"):
            parts[k] = np.where(parts[k] == LEAF, LEAF, parts[k] - a)
        trees.append(FlatTree(**parts))
    return trees


def ensemble_apply(state: dict, X: np.ndarray) -> np.ndarray:
    """Global leaf index reached by every row in every tree, shape (T, n)."""
    feature, threshold = state["feature"], state["threshold"]
    left, right = state["left"], state["right"]
    roots = np.asarray(state["offsets"])[:-1]
    n = X.shape[0]
    node = np.repeat(roots, n)
    row = np.tile(np.arange(n), len(roots))
    active = np.flatnonzero(feature[node] != LEAF)
    while active.size:
        nd = node[active]
        go_left = X[row[active], feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feature[node[active]] != LEAF]
    return node.reshape(len(roots), n)
