"""K-nearest-neighbour classifier over 2-D positions with a uniform grid index."""
from __future__ import annotations

import math

import numpy as np


class KnnModel:
    """Stores the training set; queries are answered through a bucket grid.

    Neighbours are ordered by (Euclidean distance, training index), so results
    are identical to a full linear scan with a stable sort.
    """

    def __init__(self, positions, labels, k: int = 1, points_per_cell: float = 4.0):
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        labels = np.asarray(labels, dtype=np.int64)
        if len(positions) == 0:
            raise ValueError("KNN model needs at least one training sample")
        if len(labels) != len(positions):
            raise ValueError("positions and labels differ in length")
        if not 1 <= k <= len(positions):
            raise ValueError(f"K must lie in 1..{len(positions)}")
        self.positions = positions
        self.labels = labels
        self.k = k

        lo, hi = positions.min(axis=0), positions.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        cell = math.sqrt(span[0] * span[1] * points_per_cell / len(positions)) or float(span.max())
        self._origin = lo
        self._cell = max(cell, float(span.max()) / 1024)
        self._shape = np.maximum(np.ceil(span / self._cell).astype(int), 1)
        cells = self._cell_of(positions)
        flat = cells[:, 0] * self._shape[1] + cells[:, 1]
        self._order = np.argsort(flat, kind="stable")
        self._starts = np.searchsorted(flat[self._order], np.arange(self._shape[0] * self._shape[1] + 1))

    def __len__(self) -> int:
        return len(self.positions)

    def _cell_of(self, points):
        c = np.floor((points - self._origin) / self._cell).astype(int)
        return np.clip(c, 0, self._shape - 1)

    def _bucket(self, cx, cy):
        s = cx * self._shape[1] + cy
        return self._order[self._starts[s]:self._starts[s + 1]]

    def neighbors(self, query, k: int | None = None) -> np.ndarray:
        """Indices of the k nearest training points, ordered by (distance, index)."""
        k = self.k if k is None else k
        q = np.asarray(query, dtype=float)
        cx, cy = self._cell_of(q[None])[0]
        nx, ny = self._shape
        found = []
        r = 0
        while True:
            x0, x1, y0, y1 = cx - r, cx + r, cy - r, cy + r
            for ix in range(max(x0, 0), min(x1, nx - 1) + 1):
                if ix in (x0, x1):
                    ys = range(max(y0, 0), min(y1, ny - 1) + 1)
                else:
                    ys = [y for y in (y0, y1) if 0 <= y < ny]
                for iy in ys:
                    bucket = self._bucket(ix, iy)
                    if len(bucket):
                        found.append(bucket)
            covers_all = x0 <= 0 and y0 <= 0 and x1 >= nx - 1 and y1 >= ny - 1
            if found:
                cand = np.concatenate(found)
                if len(cand) >= k or covers_all:
                    d2 = np.sum((self.positions[cand] - q) ** 2, axis=1)
                    if covers_all:
                        break
                    kth = np.partition(d2, k - 1)[k - 1]
                    # distance from q to the outside of the searched square
                    lo = self._origin + self._cell * np.array([x0, y0])
                    hi = self._origin + self._cell * np.array([x1 + 1, y1 + 1])
                    margin = min(q[0] - lo[0], hi[0] - q[0], q[1] - lo[1], hi[1] - q[1])
                    if margin > 0 and kth < margin * margin:
                        break
            elif covers_all:
                raise RuntimeError("empty index")
            r += 1
        order = np.lexsort((cand, d2))[:k]
        return cand[order]

    def predict_one(self, query) -> int:
        idx = self.neighbors(query)
        if self.k == 1:
            return int(self.labels[idx[0]])
        return _vote(self.labels[idx])

    def predict(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=float).reshape(-1, 2)
        return np.array([self.predict_one(q) for q in queries], dtype=np.int64)


def _vote(ordered_labels: np.ndarray) -> int:
    """Majority label; ties go to the tied class whose member is nearest."""
    classes, first, counts = np.unique(ordered_labels, return_index=True, return_counts=True)
    tied = counts == counts.max()
    return int(classes[tied][np.argmin(first[tied])])


def knn_predict(model: KnnModel, query) -> int:
    return model.predict_one(query)
