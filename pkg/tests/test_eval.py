import numpy as np
import pytest

from coordra import dataset as ds
from coordra.channel import channel_batch
from coordra.eval import (DistanceMcsTable, bs_distance, calibrate_distance_mcs, calibrate_mcs_offset,
                          confusion_matrix, evaluate_schemes, geometry_predict, geometry_scheme,
                          score_predictions, time_prediction, time_training, write_csv, write_json)
from coordra.experiment import label_population
from coordra.link import codebooks, default_mcs_table, goodput_grid
from coordra.learn.knn import KnnModel
from coordra.oracle import ClassCodec, solve_batch
from coordra.scenario import ScenarioConfig, drop_population


@pytest.fixture(scope="module")
def small_case():
    config = ScenarioConfig(scatterer_density=0.05)
    pop = drop_population(config, 60, seed=11)
    labels = label_population(config, pop)
    tx, rx = codebooks(config)
    codec = ClassCodec.for_grid(tx, rx, default_mcs_table(config))
    test = ds.build(pop.estimates, labels, "D1", codec, role="test")
    return config, pop, labels, test, codec


class TestScoring:
    def test_perfect_predictions(self, small_case):
        config, pop, labels, test, _ = small_case
        res = evaluate_schemes(test, pop, config, {"RF": test.labels.copy()})
        assert res["RF"].test_accuracy == 1.0 and res["RF"].perf_adjusted_accuracy == 1.0
        # labels are optimal within the tie tolerance
        assert res["RF"].avg_goodput == pytest.approx(res["CSI"].avg_goodput, rel=config.tie_tolerance)
        assert np.all(res["RF"].per_sample_goodput <= res["CSI"].per_sample_goodput)

    def test_exact_optimum_scores_equal(self, small_case):
        config, pop, labels, test, codec = small_case
        tx, rx = codebooks(config)
        h = channel_batch(config, pop.true_positions, pop.scatterers)
        rates, _ = goodput_grid(h, tx, rx, default_mcs_table(config), config)
        best = rates.reshape(len(pop), -1).argmax(axis=1)
        v, u, m = np.unravel_index(best, rates.shape[1:])
        ids = codec.encode(v, u, m)
        scores = score_predictions(config, pop, {"X": ids})
        assert np.array_equal(scores.achieved["X"], scores.optimal)

    def test_member_not_label(self, small_case):
        config, pop, labels, test, _ = small_case
        multi = [i for i in range(len(test)) if len(test.label_set(i)) > 1]
        assert multi, "fixture should contain tied optima"
        pred = test.labels.copy()
        for i in multi:
            pred[i] = test.label_set(i)[-1]
        res = evaluate_schemes(test, pop, config, {"KNN": pred})["KNN"]
        assert res.perf_adjusted_accuracy == 1.0
        assert res.test_accuracy == pytest.approx(1 - len(multi) / len(test))

    def test_upper_bound_random_predictions(self, small_case):
        config, pop, labels, test, codec = small_case
        rng = np.random.default_rng(0)
        pred = codec.encode(rng.integers(0, 60, len(test)), rng.integers(0, 15, len(test)),
                            rng.integers(0, 15, len(test)))
        res = evaluate_schemes(test, pop, config, {"Geometry": pred})
        assert np.all(res["Geometry"].per_sample_goodput <= res["CSI"].per_sample_goodput)
        assert res["Geometry"].perf_adjusted_accuracy >= res["Geometry"].test_accuracy

    def test_undecodable_prediction(self, small_case):
        config, pop, labels, test, codec = small_case
        pred = test.labels.copy()
        pred[0] = codec.encode(0, 0, 14) + 1
        with pytest.raises(ValueError):
            score_predictions(config, pop, {"RF": pred})

    def test_chunking_does_not_change_scores(self, small_case):
        config, pop, labels, test, _ = small_case
        a = score_predictions(config, pop, {"RF": test.labels}, chunk=7)
        b = score_predictions(config, pop, {"RF": test.labels}, chunk=256)
        assert np.array_equal(a.optimal, b.optimal)
        assert np.array_equal(a.optimal, labels.optimal_goodput)


class TestConfusion:
    def test_perfect_diagonal(self):
        y = np.array([3, 1, 3, 2, 1])
        mat, classes = confusion_matrix(y, y)
        assert classes.tolist() == [1, 2, 3]
        assert np.array_equal(mat, np.diag([2, 1, 2]))

    def test_row_sums(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 6, 300)
        p = rng.integers(0, 6, 300)
        mat, classes = confusion_matrix(p, y)
        assert np.array_equal(mat.sum(axis=1), np.bincount(y, minlength=6)[classes])

    def test_subset_other_column(self):
        y = np.array([1, 1, 2, 5, 5])
        p = np.array([1, 9, 2, 1, 5])
        mat, classes = confusion_matrix(p, y, classes=[1, 2])
        assert mat.tolist() == [[1, 0, 1], [0, 1, 0]]


class TestGeometry:
    def test_on_axis_beam(self):
        config = ScenarioConfig()
        tx, rx = codebooks(config)
        table = DistanceMcsTable(np.array([]), np.array([4]))
        # terminal at azimuth 135 degrees from the BS, which is beam 45 (3 degree grid)
        bs = np.array(config.bs_position)
        p = bs[:2] + 5 * np.array([np.cos(np.deg2rad(135)), np.sin(np.deg2rad(135))])
        a = geometry_scheme(p, config, table, tx, rx)
        assert a.v_idx == 45 and a.m_idx == 4
        # the opposite direction, 315 degrees folded to 45, picks receive filter 4 (48 degrees nearest)
        assert rx.angles[a.u_idx] == 48.0

    def test_equidistant_lower_index(self):
        config = ScenarioConfig()
        tx, rx = codebooks(config)
        codec = ClassCodec(len(tx), len(rx), 15)
        table = DistanceMcsTable(np.array([]), np.array([0]))
        bs = np.array(config.bs_position)
        ang = np.deg2rad(91.5)  # halfway between beams 30 (90) and 31 (93)
        p = bs[:2] + 10 * np.array([np.cos(ang), np.sin(ang)])
        v, _, _ = codec.decode(int(geometry_predict(p[None], config, table, tx, rx, codec)[0]))
        assert v == 30

    def test_distance_table(self):
        config = ScenarioConfig()
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, [6, 25], size=(1000, 2))
        d = bs_distance(pts, config)
        # monotone toy: MCS falls with distance
        mcs = np.clip(14 - (d - d.min()) // 2, 0, 14).astype(int)
        t = calibrate_distance_mcs(pts, mcs, config)
        assert len(t.mcs) == 10 and np.all(np.diff(t.mcs) <= 0)
        const = calibrate_distance_mcs(pts, np.full(1000, 6), config)
        assert np.all(const.mcs == 6)
        # querying a training point returns its bin's mode
        b = np.searchsorted(t.edges, d[0], side="right")
        in_bin = np.searchsorted(t.edges, d, side="right") == b
        assert t.lookup(d[:1])[0] == np.argmax(np.bincount(mcs[in_bin]))

    def test_empty_bins_inherit(self):
        config = ScenarioConfig()
        pts = np.array([[3.0, 1.0]] * 5 + [[3.0, 24.0]] * 5)
        t = calibrate_distance_mcs(pts, [9] * 5 + [2] * 5, config)
        assert set(t.mcs.tolist()) == {9, 2}
        with pytest.raises(ValueError):
            calibrate_distance_mcs(np.zeros((0, 2)), [], config)

    def test_mcs_offset_calibration(self):
        config = ScenarioConfig()
        off = calibrate_mcs_offset(config)
        assert off == config.mcs_threshold_offset_db
        tx, rx = codebooks(config)
        table = default_mcs_table(config)
        h = channel_batch(config, np.array([[3.0, 12.5]]))
        labels = solve_batch(h, tx, rx, table, config)
        _, _, m = ClassCodec.for_grid(tx, rx, table).decode(int(labels.first()[0]))
        assert m == len(table) // 2


class TestTiming:
    def test_median_of_runs(self):
        calls = []
        t, out = time_training(lambda: calls.append(1) or len(calls), repeats=5)
        assert len(calls) == 5 and out == 5 and t >= 0

    def test_empty_prediction(self):
        assert time_prediction(lambda q: q, np.zeros((0, 2))) == (None, None)

    def test_linear_scaling(self):
        rng = np.random.default_rng(0)
        m = KnnModel(rng.uniform(0, 10, (2000, 2)), rng.integers(0, 5, 2000))
        q = rng.uniform(0, 10, (4000, 2))
        one = min(time_prediction(m.predict, q[:2000])[0] for _ in range(3))
        two = min(time_prediction(m.predict, q)[0] for _ in range(3))
        assert two == pytest.approx(one, rel=0.2)


class TestReports:
    def test_json_and_csv(self, tmp_path):
        write_json(tmp_path / "r.json", {"a": np.float64(1.5), "b": np.arange(3), "c": None})
        assert '"a": 1.5' in (tmp_path / "r.json").read_text()
        write_csv(tmp_path / "r.csv", [{"x": 1, "y": 0.1}, {"x": 2, "z": "k"}])
        assert (tmp_path / "r.csv").read_text().splitlines() == ["x,y,z", "1,0.1,", "2,,k"]
