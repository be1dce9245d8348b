import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordra.learn.forest import (ForestModel, Tree, best_split, deserialize, features_per_split,
                                  gini_impurity, model_size, rf_predict, rf_train, serialize)
from coordra.learn.knn import KnnModel, knn_predict
from naive import linear_scan_knn


def clusters(n=200, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([1.0, 1.0], 0.3, size=(n // 2, 2))
    b = rng.normal([5.0, 20.0], 0.3, size=(n // 2, 2))
    return np.vstack([a, b]), np.r_[np.full(n // 2, 7), np.full(n // 2, 300)]


class TestKnn:
    def test_exact_match(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 0.5]])
        m = KnnModel(X, [4, 5, 6])
        assert knn_predict(m, [1.0, 1.0]) == 5

    def test_nearer_class(self):
        m = KnnModel(np.array([[0.0, 1.0], [0.0, 2.0]]), [1, 2])
        assert knn_predict(m, [0.0, 0.0]) == 1

    def test_equidistant_lower_index(self):
        m = KnnModel(np.array([[1.0, 0.0], [-1.0, 0.0]]), [9, 3])
        assert knn_predict(m, [0.0, 0.0]) == 9

    def test_vote_and_tie_rule(self):
        X = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]])
        m = KnnModel(X, [1, 2, 2, 1], k=3)
        assert knn_predict(m, [0.0, 0.0]) == 2
        # K=2 with one vote each: the nearer member's class wins
        m2 = KnnModel(X, [5, 4, 2, 1], k=2)
        assert knn_predict(m2, [0.0, 0.0]) == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            KnnModel(np.zeros((0, 2)), [])
        with pytest.raises(ValueError):
            KnnModel(np.zeros((2, 2)), [1, 2], k=3)
        with pytest.raises(ValueError):
            KnnModel(np.zeros((2, 2)), [1, 2], k=0)

    @pytest.mark.parametrize("k", [1, 3, 8])
    def test_index_equals_linear_scan(self, k):
        rng = np.random.default_rng(k)
        X = rng.uniform(0, [6, 25], size=(1500, 2))
        X[100:110] = X[0]  # duplicates exercise the index tie rule
        y = rng.integers(0, 40, size=1500)
        m = KnnModel(X, y, k=k)
        Q = np.vstack([rng.uniform(-2, [8, 27], size=(990, 2)), X[:10]])
        got = m.predict(Q)
        want = [linear_scan_knn(X, y, q, k) for q in Q]
        assert got.tolist() == want

    def test_training_accuracy(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 10, size=(500, 2))
        y = rng.integers(0, 9, size=500)
        assert np.array_equal(KnnModel(X, y).predict(X), y)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 10, size=(300, 2))
        y = rng.integers(0, 5, size=300)
        Q = rng.uniform(0, 10, size=(100, 2))
        shift = np.array([13.0, -4.0])
        assert np.array_equal(KnnModel(X, y, 3).predict(Q), KnnModel(X + shift, y, 3).predict(Q + shift))


class TestGini:
    def test_hand_values(self):
        assert gini_impurity([2, 2]) == 0.5
        assert gini_impurity([4, 0]) == 0.0
        assert gini_impurity([1, 1, 1]) == pytest.approx(2 / 3)
        assert gini_impurity([]) == 0.0

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=6))
    def test_range(self, counts):
        g = gini_impurity(counts)
        k = max(1, sum(c > 0 for c in counts))
        assert 0.0 <= g <= 1 - 1 / k + 1e-12


def brute_split(x, y):
    """Best (weighted impurity, threshold) by trying every midpoint."""
    best = None
    values = np.unique(x)
    classes = np.unique(y)
    for lo, hi in zip(values[:-1], values[1:]):
        thr = (lo + hi) / 2
        left, right = y[x <= thr], y[x > thr]
        imp = sum(len(s) * gini_impurity([np.sum(s == c) for c in classes]) for s in (left, right)) / len(y)
        if best is None or imp < best[0] - 1e-12:
            best = (imp, thr)
    return best


class TestSplit:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 3)), min_size=2, max_size=40))
    def test_matches_brute_force(self, rows):
        x = np.array([r[0] for r in rows], dtype=float) / 4
        y = np.array([r[1] for r in rows])
        counts = np.bincount(y, minlength=4)
        got = best_split(x, y, counts)
        ref = brute_split(x, y)
        parent = gini_impurity(counts)
        if ref is None or ref[0] >= parent - 1e-12:
            assert got is None
        else:
            assert got is not None
            thr = got[1]
            left, right = y[x <= thr], y[x > thr]
            imp = sum(len(s) * gini_impurity(np.bincount(s, minlength=4)) for s in (left, right)) / len(y)
            assert imp == pytest.approx(ref[0], abs=1e-12)

    def test_threshold_is_midpoint(self):
        x = np.array([1.0, 2.0, 4.0, 5.0])
        y = np.array([0, 0, 1, 1])
        assert best_split(x, y, np.bincount(y))[1] == 3.0

    def test_constant_feature(self):
        assert best_split(np.ones(5), np.array([0, 1, 0, 1, 0]), np.array([3, 2])) is None


class TestForest:
    def test_features_per_split(self):
        assert features_per_split(2) == 1 and features_per_split(9) == 3

    def test_single_class(self):
        X = np.random.default_rng(0).uniform(size=(30, 2))
        m = rf_train(X, np.full(30, 11), n_trees=5, max_depth=4)
        assert all(len(t.feature) == 0 and len(t.leaf_class) == 1 for t in m.trees)
        assert rf_predict(m, [0.3, 0.3]) == 11

    def test_separable_clusters(self):
        X, y = clusters()
        m = rf_train(X, y, n_trees=10, max_depth=5, seed=1)
        assert np.array_equal(m.predict(X), y)

    def test_depth_bound(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0, 10, size=(800, 2))
        y = rng.integers(0, 30, size=800)
        for depth in (0, 1, 3, 7):
            m = rf_train(X, y, n_trees=4, max_depth=depth, seed=2)
            assert len(m.trees) == 4
            assert max(t.depth() for t in m.trees) <= depth

    def test_deterministic(self):
        X, y = clusters(seed=3)
        Q = np.random.default_rng(9).uniform(0, 20, size=(50, 2))
        a = rf_train(X, y, 7, 6, seed=5)
        b = rf_train(X, y, 7, 6, seed=5)
        assert serialize(a) == serialize(b)
        assert np.array_equal(a.predict(Q), b.predict(Q))

    def test_single_tree_votes_its_leaf(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(0, 10, size=(200, 2))
        y = rng.integers(0, 6, size=200)
        m = rf_train(X, y, 1, 3, seed=0)
        Q = rng.uniform(0, 10, size=(40, 2))
        tree = m.trees[0]
        leaves = tree.apply(Q)
        for q, leaf, p in zip(Q, leaves, m.predict(Q)):
            classes, counts = tree.leaf_hist[leaf]
            assert p == classes[np.argmax(counts)]

    def test_vote_tie_smallest_class(self):
        leaf = lambda c: Tree(np.zeros(0, np.uint8), np.zeros(0), np.zeros(0, np.int64),
                              np.zeros(0, np.int64), np.array([c]))
        m = ForestModel([leaf(9), leaf(4), leaf(9), leaf(4)], 1, 2, 1)
        assert rf_predict(m, [0.0, 0.0]) == 4

    def test_duplicate_inputs_stop(self):
        X = np.zeros((10, 2))
        y = np.array([1, 2] * 5)
        m = rf_train(X, y, 3, 10)
        assert all(len(t.feature) == 0 for t in m.trees)

    def test_translation_with_retraining(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(0, 10, size=(400, 2))
        y = (X[:, 0] > 5).astype(int) * 2 + (X[:, 1] > 3)
        Q = rng.uniform(0, 10, size=(100, 2))
        shift = np.array([0.5, 0.25])  # exactly representable, so midpoints shift exactly
        a = rf_train(X, y, 5, 6, seed=1).predict(Q)
        b = rf_train(X + shift, y, 5, 6, seed=1).predict(Q + shift)
        assert np.array_equal(a, b)


class TestSerialization:
    def test_roundtrip(self):
        X, y = clusters(seed=7)
        m = rf_train(X, y, 6, 5, seed=3)
        back = deserialize(serialize(m))
        Q = np.random.default_rng(1).uniform(-1, 22, size=(200, 2))
        assert np.array_equal(back.predict(Q), m.predict(Q))
        assert serialize(back) == serialize(m)

    def test_size_accounting(self):
        X, y = clusters(seed=8)
        m = rf_train(X, y, 4, 5, seed=0)
        internal = sum(len(t.feature) for t in m.trees)
        leaves = sum(len(t.leaf_class) for t in m.trees)
        assert model_size(m) == 13 + 8 * 4 + 17 * internal + 4 * leaves

    def test_single_leaf(self):
        m = rf_train(np.zeros((3, 2)), [5, 5, 5], 1, 3)
        assert model_size(m) == 13 + 8 + 4

    def test_additivity(self):
        X, y = clusters(seed=9)
        m = rf_train(X, y, 3, 4)
        doubled = ForestModel(m.trees * 2, m.max_depth, m.n_features, m.features_per_split)
        assert model_size(doubled) - 13 == 2 * (model_size(m) - 13)

    def test_rejects_garbage(self):
        X, y = clusters(seed=9)
        blob = serialize(rf_train(X, y, 2, 3))
        with pytest.raises(ValueError):
            deserialize(b"XXXX" + blob[4:])
        with pytest.raises(ValueError):
            deserialize(blob + b"\0")
