"""Counter-based random streams keyed by (seed, stream, tree, node).

Every draw a tree makes comes from a Philox generator whose key is a pure
function of its position in the ensemble, so building trees in any order or
in parallel yields bit-identical models. Per-node feature sampling instead
hashes (seed, tree, node, column identity) with splitmix64, so the chosen
features follow the columns when the input columns are reordered.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

BOOTSTRAP, FEATURES, SPLIT, SUBSAMPLE = 1, 2, 3, 4


def keyed_rng(seed: int, stream: int, tree: int = 0, node: int = 0) -> np.random.Generator:
    if not (0 <= tree < 1 << 28 and 0 <= node < 1 << 28 and 0 <= stream < 256):
        raise ValueError(f"rng key out of range: stream={stream} tree={tree} node={node}")
    key = (int(seed) & _MASK64) << 64 | stream << 56 | tree << 28 | node
    return np.random.Generator(np.random.Philox(key=key))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, stream: int, tree: int, node, column) -> np.ndarray:
    """Uniform [0, 1) values that depend only on (seed, stream, tree, node, column).

    ``node`` and ``column`` broadcast against each other, so a whole level of
    nodes times all columns is hashed in one call.
    """
    node = np.asarray(node, dtype=np.uint64)
    column = np.asarray(column, dtype=np.uint64)
    h = _splitmix64(np.atleast_1d(np.uint64(int(seed) & _MASK64)))
    h = _splitmix64(h ^ np.uint64(stream))
    h = _splitmix64(h ^ np.uint64(tree))
    h = _splitmix64(h ^ node)
    h = _splitmix64(h ^ column)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
