"""Random forest of CART trees (Gini impurity, bootstrap, hard voting)."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..scenario import FOREST, stream

MAGIC = b"CRFT"
VERSION = 1
_HEADER = struct.Struct("<4sHBIH")  # magic, version, n_features, n_trees, max_depth
_TREE_HEADER = struct.Struct("<II")  # internal node count, leaf count
NODE_DTYPE = np.dtype([("feature", "u1"), ("threshold", "<f8"), ("left", "<i4"), ("right", "<i4")])
LEAF_DTYPE = np.dtype("<i4")


def gini_impurity(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    return float(1.0 - np.sum(counts ** 2) / n ** 2)


def features_per_split(n_features: int) -> int:
    return max(1, int(math.floor(math.sqrt(n_features))))


@dataclass
class Tree:
    """Child references: value >= 0 is an internal node, value < 0 is leaf ``~value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    leaf_hist: list = field(default_factory=list, repr=False)  # (classes, counts) per leaf, sparse

    @property
    def root(self) -> int:
        return 0 if len(self.feature) else -1

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X."""
        cur = np.full(len(X), self.root, dtype=np.int64)
        active = np.flatnonzero(cur >= 0)
        while len(active):
            node = cur[active]
            go_left = X[active, self.feature[node]] <= self.threshold[node]
            cur[active] = np.where(go_left, self.left[node], self.right[node])
            active = active[cur[active] >= 0]
        return ~cur

    def predict(self, X) -> np.ndarray:
        return self.leaf_class[self.apply(np.asarray(X, dtype=float))]

    def depth(self) -> int:
        """Longest root-to-leaf path, counted in edges."""
        if not len(self.feature):
            return 0
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            for child in (self.left[node], self.right[node]):
                if child >= 0:
                    stack.append((child, d + 1))
                else:
                    best = max(best, d + 1)
        return best


@dataclass
class ForestModel:
    trees: list[Tree]
    max_depth: int
    n_features: int
    features_per_split: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n_features)
        votes = np.stack([t.predict(X) for t in self.trees])  # (trees, samples)
        return _mode(votes)


def _mode(votes: np.ndarray) -> np.ndarray:
    """Column-wise most frequent value, ties to the smallest."""
    classes, codes = np.unique(votes, return_inverse=True)
    codes = codes.reshape(votes.shape)
    n_trees, n = votes.shape
    out = np.empty(n, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(len(classes), 1))
    for a in range(0, n, chunk):
        c = codes[:, a:a + chunk]
        m = c.shape[1]
        key = (np.arange(m)[None, :] * len(classes) + c).ravel()
        counts = np.bincount(key, minlength=m * len(classes)).reshape(m, len(classes))
        out[a:a + m] = classes[np.argmax(counts, axis=1)]
    return out


class _Builder:
    def __init__(self, X, y, n_classes, max_depth, n_try, rng):
        self.X, self.y = X, y
        self.n_classes = n_classes
        self.max_depth = max_depth
        self.n_try = n_try
        self.rng = rng
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.leaves, self.hists = [], []

    def leaf(self, counts) -> int:
        self.leaves.append(int(np.argmax(counts)))  # first max: smallest class
        present = np.flatnonzero(counts)
        self.hists.append((present, counts[present]))
        return ~(len(self.leaves) - 1)

    def grow(self, idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(self.y[idx], minlength=self.n_classes)
        if depth >= self.max_depth or len(idx) < 2 or np.count_nonzero(counts) == 1:
            return self.leaf(counts)
        split = None
        order = self.rng.permutation(self.X.shape[1])
        # evaluate n_try features; look further only if none of them helps
        for j, f in enumerate(order):
            cand = best_split(self.X[idx, f], self.y[idx], counts)
            if cand is not None and (split is None or cand[0] > split[0]):
                split = (cand[0], f, cand[1])
            if split is not None and j + 1 >= self.n_try:
                break
        if split is None:
            return self.leaf(counts)
        _, f, thr = split
        node = len(self.feature)
        self.feature.append(f)
        self.threshold.append(thr)
        self.left.append(0)
        self.right.append(0)
        go_left = self.X[idx, f] <= thr
        self.left[node] = self.grow(idx[go_left], depth + 1)
        self.right[node] = self.grow(idx[~go_left], depth + 1)
        return node

    def tree(self) -> Tree:
        return Tree(np.array(self.feature, dtype=np.uint8), np.array(self.threshold, dtype=float),
                    np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                    np.array(self.leaves, dtype=np.int64), self.hists)


def best_split(x: np.ndarray, y: np.ndarray, counts: np.ndarray):
    """Best Gini split of one feature: (score, threshold) or None.

    Score is sum over children of (sum of squared class counts) / size; it is
    maximized exactly where weighted Gini impurity is minimized.
    """
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    boundary = np.flatnonzero(xs[1:] > xs[:-1]) + 1  # left-side sizes with a valid cut
    if not len(boundary):
        return None
    # number of earlier samples of the same class, in sorted-x order
    by_class = np.argsort(ys, kind="stable")
    sorted_y = ys[by_class]
    group_start = np.r_[0, np.flatnonzero(sorted_y[1:] != sorted_y[:-1]) + 1]
    sizes = np.diff(np.r_[group_start, n])
    seen = np.empty(n, dtype=np.int64)
    seen[by_class] = np.arange(n) - np.repeat(group_start, sizes)
    ssq_left = np.cumsum(2 * seen + 1)
    ssq_total = int(np.sum(counts.astype(np.int64) ** 2))
    ssq_right = ssq_total - np.cumsum(2 * (counts[ys] - seen) - 1)
    n_left = boundary
    score = ssq_left[n_left - 1] / n_left + ssq_right[n_left - 1] / (n - n_left)
    i = int(np.argmax(score))
    if score[i] <= ssq_total / n * (1 + 1e-12):
        return None
    lo, hi = xs[boundary[i] - 1], xs[boundary[i]]
    thr = (lo + hi) / 2
    if not lo <= thr < hi:
        thr = lo
    return float(score[i]), float(thr)


def train_tree(X, y_codes, n_classes, max_depth, n_try, rng) -> Tree:
    n = len(X)
    boot = rng.integers(0, n, size=n)
    builder = _Builder(X, y_codes, n_classes, max_depth, n_try, rng)
    builder.grow(boot, 0)
    return builder.tree()


def rf_train(X, y, n_trees: int = 100, max_depth: int = 15, seed: int = 0) -> ForestModel:
    """Train a forest. Tree t draws from its own stream (seed, t), so the
    forest is reproducible and trees could be built in any order."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if n_trees < 1 or max_depth < 0:
        raise ValueError("need n_trees >= 1 and max_depth >= 0")
    classes, codes = np.unique(y, return_inverse=True)
    n_try = features_per_split(X.shape[1])
    trees = []
    for t in range(n_trees):
        tree = train_tree(X, codes, len(classes), max_depth, n_try, stream(seed, FOREST, t))
        tree.leaf_class = classes[tree.leaf_class]
        tree.leaf_hist = [(classes[c], k) for c, k in tree.leaf_hist]
        trees.append(tree)
    return ForestModel(trees, max_depth, X.shape[1], n_try)


def rf_predict(model: ForestModel, query) -> int:
    return int(model.predict(np.asarray(query, dtype=float)[None])[0])


def serialize(model: ForestModel) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, model.n_features, len(model.trees), model.max_depth)]
    for t in model.trees:
        nodes = np.empty(len(t.feature), dtype=NODE_DTYPE)
        nodes["feature"], nodes["threshold"] = t.feature, t.threshold
        nodes["left"], nodes["right"] = t.left, t.right
        parts.append(_TREE_HEADER.pack(len(nodes), len(t.leaf_class)))
        parts.append(nodes.tobytes())
        parts.append(t.leaf_class.astype(LEAF_DTYPE).tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> ForestModel:
    magic, version, n_features, n_trees, max_depth = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError("not a serialized forest")
    if version != VERSION:
        raise ValueError(f"unsupported forest format version {version}")
    pos = _HEADER.size
    trees = []
    for _ in range(n_trees):
        n_nodes, n_leaves = _TREE_HEADER.unpack_from(data, pos)
        pos += _TREE_HEADER.size
        nodes = np.frombuffer(data, dtype=NODE_DTYPE, count=n_nodes, offset=pos)
        pos += n_nodes * NODE_DTYPE.itemsize
        leaves = np.frombuffer(data, dtype=LEAF_DTYPE, count=n_leaves, offset=pos)
        pos += n_leaves * LEAF_DTYPE.itemsize
        trees.append(Tree(nodes["feature"].copy(), nodes["threshold"].astype(float),
                          nodes["left"].astype(np.int64), nodes["right"].astype(np.int64),
                          leaves.astype(np.int64)))
    if pos != len(data):
        raise ValueError("trailing bytes after forest")
    return ForestModel(trees, max_depth, n_features, features_per_split(n_features))


def model_size(model: ForestModel) -> int:
    """Bytes in the serialized format: 13-byte header, 8 bytes per tree,
    17 bytes per internal node and 4 bytes per leaf."""
    return len(serialize(model))
