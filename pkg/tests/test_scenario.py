import numpy as np
import pytest

from coordra.scenario import (ScenarioConfig, drop_population, generate_trace, perturb_position,
                              place_scatterers, random_drop, stream, trace_length, trace_population)


class TestConfig:
    def test_defaults(self):
        c = ScenarioConfig()
        assert c.street_area == 150.0
        assert c.bs_position == (9.0, 0.0, 10.0)
        assert c.tx_antennas == 8 and c.rx_antennas == 2

    @pytest.mark.parametrize("changes", [
        {"tx_antennas": 6}, {"rx_antennas": 3}, {"scatterer_density": -0.1},
        {"position_error_sigma": -1.0}, {"street_width": 0.0}, {"subcarrier_count": 0},
    ])
    def test_rejects_invalid(self, changes):
        with pytest.raises(ValueError):
            ScenarioConfig(**changes)

    def test_text_roundtrip(self):
        c = ScenarioConfig(scatterer_density=0.05, position_error_sigma=0.4, max_scatterers=5, rng_seed=7)
        assert ScenarioConfig.from_text(c.to_text()) == c

    def test_text_errors_carry_line_numbers(self):
        with pytest.raises(ValueError, match="line 2"):
            ScenarioConfig.from_text("tx_antennas = 8\nbogus = 1\n")
        with pytest.raises(ValueError, match="line 1"):
            ScenarioConfig.from_text("tx_antennas = eight\n")

    def test_comments_and_partial_files(self):
        c = ScenarioConfig.from_text("# case 3\nscatterer_density = 0.05  # per m^2\n")
        assert c.scatterer_density == 0.05 and c.tx_antennas == 8

    def test_digest_tracks_content(self):
        a = ScenarioConfig()
        assert a.digest() == ScenarioConfig().digest()
        assert a.digest() != a.replace(scatterer_density=0.05).digest()


class TestDrops:
    def test_inside_street(self):
        c = ScenarioConfig()
        pts = np.array([random_drop(c, stream(1, 0, i)).true_position for i in range(2000)])
        assert np.all(pts >= 0) and np.all(pts[:, 0] <= 6) and np.all(pts[:, 1] <= 25)

    def test_deterministic(self):
        c = ScenarioConfig(scatterer_density=0.05, position_error_sigma=0.4)
        a, b = drop_population(c, 50, 3), drop_population(c, 50, 3)
        assert np.array_equal(a.true_positions, b.true_positions)
        assert np.array_equal(a.estimates, b.estimates)
        assert np.array_equal(a.scatterers.positions, b.scatterers.positions)

    def test_prefix_property(self):
        c = ScenarioConfig(scatterer_density=0.05)
        small, big = drop_population(c, 20, 4), drop_population(c, 40, 4)
        assert np.array_equal(small.true_positions, big.true_positions[:20])
        assert np.array_equal(small.scatterers.offsets, big.scatterers.offsets[:21])


class TestScatterers:
    def test_zero_density(self):
        assert place_scatterers(ScenarioConfig(), stream(0, 1, 0)) == []

    def test_max_count_floor(self):
        assert ScenarioConfig(scatterer_density=0.05).max_scatterer_count == 7
        assert ScenarioConfig(scatterer_density=0.05, max_scatterers=5).max_scatterer_count == 5

    def test_count_support_and_bounds(self):
        c = ScenarioConfig(scatterer_density=0.05)
        rng = np.random.default_rng(0)
        counts = set()
        for _ in range(3000):
            s = place_scatterers(c, rng)
            counts.add(len(s))
            for sc in s:
                assert 0 <= sc.position[0] <= 6 and 0 <= sc.position[1] <= 25
                assert 0.3 <= sc.reflection_gain <= 0.9
        assert counts == set(range(8))


class TestPositionError:
    def test_zero_sigma_identity(self):
        p = np.array([1.0, 2.0])
        assert np.array_equal(perturb_position(p, 0.0, np.random.default_rng(0)), p)

    def test_sigma_statistics(self):
        rng = np.random.default_rng(5)
        d = np.array([perturb_position(np.zeros(2), 0.4, rng) for _ in range(20000)])
        assert abs(d.std() - 0.4) < 0.01
        assert abs(d.mean()) < 0.01

    def test_not_clipped(self):
        rng = np.random.default_rng(0)
        d = np.array([perturb_position(np.zeros(2), 1.0, rng) for _ in range(100)])
        assert (d < 0).any()

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            perturb_position(np.zeros(2), -0.1, np.random.default_rng(0))


class TestTraces:
    def test_length(self):
        assert trace_length(ScenarioConfig(), 15.0, 1e-3) == 1667

    def test_straight_line(self):
        t = generate_trace(ScenarioConfig(), np.random.default_rng(2))
        xs = {s.true_position[0] for s in t}
        ys = np.array([s.true_position[1] for s in t])
        assert len(xs) == 1 and len(t) == 1667
        assert ys[0] == 0.0 and ys[-1] <= 25.0 and np.all(np.diff(ys) > 0)

    @pytest.mark.parametrize("speed,period", [(0.0, 1e-3), (15.0, 0.0), (-1.0, 1e-3)])
    def test_rejects_bad_motion(self, speed, period):
        with pytest.raises(ValueError):
            generate_trace(ScenarioConfig(), np.random.default_rng(0), speed, period)

    def test_population_shares_scatterers_within_trace(self):
        c = ScenarioConfig(scatterer_density=0.05)
        pop = trace_population(c, 3, seed=1)
        assert len(pop) == 3 * 1667
        for j in range(3):
            rows = np.flatnonzero(pop.group == j)
            first = pop.scatterers[rows[0]]
            assert pop.scatterers[rows[-1]] == first
