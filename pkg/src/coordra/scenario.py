"""Street geometry, terminal drops and traces, scatterers and position noise."""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

# Stream tags for per-sample RNG derivation. Every random quantity is drawn
# from default_rng([seed, tag, index]) so that results never depend on the
# order in which samples are processed.
DROP, SCATTER, NOISE, TRACE, TRACE_NOISE, SPLIT, FOREST = range(7)


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag), int(index)])


@dataclass(frozen=True)
class ScenarioConfig:
    street_width: float = 6.0
    street_length: float = 25.0
    bs_position: tuple[float, float, float] = (9.0, 0.0, 10.0)
    terminal_height: float = 1.5
    carrier_frequency: float = 3.5e9
    bandwidth: float = 200e6
    subcarrier_count: int = 16
    frame_duration: float = 2e-4
    tx_power: float = 1e-6
    tx_antennas: int = 8
    rx_antennas: int = 2
    scatterer_density: float = 0.0
    position_error_sigma: float = 0.0
    rng_seed: int = 0
    max_scatterers: int | None = None
    scatterer_height: float = 2.0
    reflection_gain_range: tuple[float, float] = (0.3, 0.9)
    tx_beam_spacing: float = 3.0
    rx_beam_spacing: float = 12.0
    noise_figure_db: float = 9.0
    bler_slope: float = 2.0
    mcs_threshold_offset_db: float = -0.3
    tie_tolerance: float = 1e-2

    def __post_init__(self):
        for name in ("street_width", "street_length", "frame_duration", "tx_power",
                     "carrier_frequency", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.subcarrier_count < 1:
            raise ValueError("subcarrier_count must be >= 1")
        if self.tx_antennas not in (4, 8):
            raise ValueError("tx_antennas must be 4 or 8")
        if self.rx_antennas not in (1, 2):
            raise ValueError("rx_antennas must be 1 or 2")
        if self.scatterer_density < 0:
            raise ValueError("scatterer_density must be >= 0")
        if self.position_error_sigma < 0:
            raise ValueError("position_error_sigma must be >= 0")
        if self.max_scatterers is not None and self.max_scatterers < 0:
            raise ValueError("max_scatterers must be >= 0")
        lo, hi = self.reflection_gain_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("reflection_gain_range must lie in (0, 1]")

    @property
    def street_area(self) -> float:
        return self.street_width * self.street_length

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def max_scatterer_count(self) -> int:
        if self.max_scatterers is not None:
            return self.max_scatterers
        # small epsilon so that e.g. 0.05 * 100 does not floor to 4
        return int(math.floor(self.scatterer_density * self.street_area + 1e-9))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(float(v)) for v in value)
            elif value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(kinds[key], value, lineno)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_text(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


SPEED_OF_LIGHT = 299_792_458.0


def _parse_value(kind: str, value: str, lineno: int):
    try:
        if kind.startswith("tuple"):
            return tuple(float(v) for v in value.split(","))
        if kind == "int":
            return int(value)
        if kind == "int | None":
            return None if value.lower() == "none" else int(value)
        return float(value)
    except ValueError as exc:
        raise ValueError(f"line {lineno}: bad value {value!r}") from exc


@dataclass
class TerminalState:
    true_position: np.ndarray
    estimated_position: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class Scatterer:
    position: tuple[float, float, float]
    reflection_gain: float


@dataclass
class ScattererSets:
    """Ragged collection of scatterer sets, one per sample (CSR layout)."""

    offsets: np.ndarray  # (n + 1,)
    positions: np.ndarray  # (total, 3)
    gains: np.ndarray  # (total,)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def __getitem__(self, i: int) -> list[Scatterer]:
        a, b = self.offsets[i], self.offsets[i + 1]
        return [Scatterer(tuple(p), float(g)) for p, g in zip(self.positions[a:b], self.gains[a:b])]

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def take(self, index: np.ndarray) -> "ScattererSets":
        index = np.asarray(index, dtype=np.int64)
        counts = self.counts()[index]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        starts = np.repeat(self.offsets[:-1][index], counts)
        within = np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts)
        rows = starts + within
        return ScattererSets(offsets, self.positions[rows], self.gains[rows])

    @classmethod
    def from_lists(cls, sets: Iterable[list[Scatterer]]) -> "ScattererSets":
        sets = list(sets)
        counts = np.array([len(s) for s in sets], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        flat = [s for group in sets for s in group]
        positions = np.array([s.position for s in flat], dtype=float).reshape(-1, 3)
        gains = np.array([s.reflection_gain for s in flat], dtype=float)
        return cls(offsets, positions, gains)


def random_drop(config: ScenarioConfig, rng: np.random.Generator) -> TerminalState:
    p = rng.uniform((0.0, 0.0), (config.street_width, config.street_length))
    return TerminalState(p, p.copy())


def place_scatterers(config: ScenarioConfig, rng: np.random.Generator) -> list[Scatterer]:
    count = int(rng.integers(0, config.max_scatterer_count + 1))
    if count == 0:
        return []
    xy = rng.uniform((0.0, 0.0), (config.street_width, config.street_length), size=(count, 2))
    z = rng.uniform(0.0, config.scatterer_height, size=count)
    gains = rng.uniform(*config.reflection_gain_range, size=count)
    return [Scatterer((float(a), float(b), float(c)), float(g)) for (a, b), c, g in zip(xy, z, gains)]


def perturb_position(p, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    p = np.asarray(p, dtype=float)
    # never clipped: the estimate may fall outside the street
    return p + rng.normal(0.0, sigma, size=p.shape)


def trace_length(config: ScenarioConfig, speed: float, sample_period: float) -> int:
    step = speed * sample_period
    return int(math.floor(config.street_length / step + 1e-9)) + 1


def generate_trace(config: ScenarioConfig, rng: np.random.Generator, speed: float = 15.0,
                   sample_period: float = 1e-3) -> list[TerminalState]:
    if speed <= 0 or sample_period <= 0:
        raise ValueError("speed and sample_period must be positive")
    x = rng.uniform(0.0, config.street_width)
    n = trace_length(config, speed, sample_period)
    k = np.arange(n)
    ys = k * (speed * sample_period)
    states = []
    for t, y in zip(k * sample_period, ys):
        p = np.array([x, y])
        states.append(TerminalState(p, p.copy(), float(t)))
    return states


@dataclass
class Population:
    """A batch of terminal samples: true positions, estimates, scatterers.

    ``group`` is the trace index for trace data and -1 for random drops.
    """

    true_positions: np.ndarray  # (n, 2)
    estimates: np.ndarray  # (n, 2)
    scatterers: ScattererSets
    group: np.ndarray  # (n,)
    timestamps: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.true_positions)

    def take(self, index) -> "Population":
        index = np.asarray(index)
        return Population(self.true_positions[index], self.estimates[index],
                          self.scatterers.take(index), self.group[index], self.timestamps[index])


def drop_population(config: ScenarioConfig, n: int, seed: int | None = None) -> Population:
    """``n`` independent random drops. Sample i uses streams keyed by i, so a
    population of size n is a prefix of any larger one with the same seed."""
    seed = config.rng_seed if seed is None else seed
    true = np.empty((n, 2))
    sets = []
    for i in range(n):
        true[i] = random_drop(config, stream(seed, DROP, i)).true_position
        sets.append(place_scatterers(config, stream(seed, SCATTER, i)))
    est = with_position_error(true, config.position_error_sigma, seed)
    return Population(true, est, ScattererSets.from_lists(sets), np.full(n, -1), np.zeros(n))


def with_position_error(true: np.ndarray, sigma: float, seed: int, tag: int = NOISE) -> np.ndarray:
    if sigma == 0:
        return true.copy()
    est = np.empty_like(true)
    for i in range(len(true)):
        est[i] = perturb_position(true[i], sigma, stream(seed, tag, i))
    return est


def trace_population(config: ScenarioConfig, n_traces: int, speed: float = 15.0,
                     sample_period: float = 1e-3, seed: int | None = None) -> Population:
    """Straight-line traces along y; one scatterer set per trace."""
    seed = config.rng_seed if seed is None else seed
    true, sets, group, times = [], [], [], []
    for j in range(n_traces):
        rng = stream(seed, TRACE, j)
        states = generate_trace(config, rng, speed, sample_period)
        scat = place_scatterers(config, rng)
        true.extend(s.true_position for s in states)
        sets.extend([scat] * len(states))
        group.extend([j] * len(states))
        times.extend(s.timestamp for s in states)
    true = np.array(true).reshape(-1, 2)
    est = with_position_error(true, config.position_error_sigma, seed, TRACE_NOISE)
    return Population(true, est, ScattererSets.from_lists(sets), np.array(group), np.array(times))
