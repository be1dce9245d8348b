"""Exhaustive-search solver for the goodput-maximizing resource allocation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .link import Codebook, McsTable, goodput_grid
from .scenario import ScenarioConfig


@dataclass(frozen=True)
class ClassCodec:
    """Packs (v, u, m) into one integer: v | u | m bit fields, m lowest."""

    n_tx: int
    n_rx: int
    n_mcs: int

    @property
    def bits_u(self) -> int:
        return math.ceil(math.log2(self.n_rx)) if self.n_rx > 1 else 0

    @property
    def bits_m(self) -> int:
        return math.ceil(math.log2(self.n_mcs)) if self.n_mcs > 1 else 0

    def encode(self, v, u, m):
        v, u, m = (np.asarray(a, dtype=np.int64) for a in (v, u, m))
        if np.any((v < 0) | (v >= self.n_tx) | (u < 0) | (u >= self.n_rx) | (m < 0) | (m >= self.n_mcs)):
            raise ValueError("allocation index out of range")
        out = (v << (self.bits_u + self.bits_m)) | (u << self.bits_m) | m
        return int(out) if out.ndim == 0 else out

    def decode(self, class_id):
        c = np.asarray(class_id, dtype=np.int64)
        m = c & ((1 << self.bits_m) - 1)
        u = (c >> self.bits_m) & ((1 << self.bits_u) - 1)
        v = c >> (self.bits_u + self.bits_m)
        if np.any((c < 0) | (v >= self.n_tx) | (u >= self.n_rx) | (m >= self.n_mcs)):
            raise ValueError(f"class id does not decode to a valid allocation")
        if c.ndim == 0:
            return int(v), int(u), int(m)
        return v, u, m

    @classmethod
    def for_grid(cls, tx: Codebook, rx: Codebook, table: McsTable) -> "ClassCodec":
        return cls(len(tx), len(rx), len(table))


@dataclass(frozen=True)
class ResourceAllocation:
    v_idx: int
    u_idx: int
    m_idx: int
    class_id: int

    @classmethod
    def from_class(cls, codec: ClassCodec, class_id: int) -> "ResourceAllocation":
        v, u, m = codec.decode(class_id)
        return cls(v, u, m, int(class_id))

    @classmethod
    def from_indices(cls, codec: ClassCodec, v: int, u: int, m: int) -> "ResourceAllocation":
        return cls(int(v), int(u), int(m), codec.encode(v, u, m))


@dataclass
class OptimalSet:
    allocations: list[ResourceAllocation]
    optimal_goodput: float
    eeff_per_allocation: list[float]

    def __post_init__(self):
        if not self.allocations:
            raise ValueError("optimal set cannot be empty")
        if len(self.allocations) != len(self.eeff_per_allocation):
            raise ValueError("effective SNR list must align with allocations")

    @property
    def class_ids(self) -> list[int]:
        return [a.class_id for a in self.allocations]


def optimal_members(rates: np.ndarray, tie_tolerance: float) -> np.ndarray:
    """Boolean mask of grid points whose goodput ties the maximum."""
    best = rates.max()
    return rates >= best - tie_tolerance * best


def solve(channel, tx: Codebook, rx: Codebook, table: McsTable, config: ScenarioConfig) -> OptimalSet:
    matrices = getattr(channel, "matrices", channel)
    rates, eff = goodput_grid(np.asarray(matrices)[None], tx, rx, table, config)
    return _optimal_set(rates[0], eff[0], ClassCodec.for_grid(tx, rx, table), config.tie_tolerance)


def _optimal_set(rates, eff, codec, tol) -> OptimalSet:
    v, u, m = np.nonzero(optimal_members(rates, tol))  # C order: v outer, u middle, m inner
    allocs = [ResourceAllocation.from_indices(codec, a, b, c) for a, b, c in zip(v, u, m)]
    return OptimalSet(allocs, float(rates.max()), [float(x) for x in eff[v, u, m]])


@dataclass
class LabelBatch:
    """Oracle output for many samples in ragged (CSR) layout."""

    offsets: np.ndarray  # (n + 1,)
    class_ids: np.ndarray  # members in grid order
    eeff: np.ndarray  # aligned with class_ids
    optimal_goodput: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def members(self, i: int) -> np.ndarray:
        return self.class_ids[self.offsets[i]:self.offsets[i + 1]]

    def optimal_set(self, i: int, codec: ClassCodec) -> OptimalSet:
        a, b = self.offsets[i], self.offsets[i + 1]
        allocs = [ResourceAllocation.from_class(codec, c) for c in self.class_ids[a:b]]
        return OptimalSet(allocs, float(self.optimal_goodput[i]), [float(x) for x in self.eeff[a:b]])

    def first(self) -> np.ndarray:
        return self.class_ids[self.offsets[:-1]]

    def max_eeff(self) -> np.ndarray:
        out = np.empty(len(self), dtype=np.int64)
        for i in range(len(self)):
            a, b = self.offsets[i], self.offsets[i + 1]
            out[i] = self.class_ids[a + int(np.argmax(self.eeff[a:b]))]
        return out

    def take(self, index) -> "LabelBatch":
        index = np.asarray(index, dtype=np.int64)
        counts = np.diff(self.offsets)[index]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        rows = np.repeat(self.offsets[:-1][index], counts) + (
            np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts))
        return LabelBatch(offsets, self.class_ids[rows], self.eeff[rows], self.optimal_goodput[index])

    @classmethod
    def concat(cls, parts: list["LabelBatch"]) -> "LabelBatch":
        counts = np.concatenate([np.diff(p.offsets) for p in parts])
        return cls(np.concatenate([[0], np.cumsum(counts)]),
                   np.concatenate([p.class_ids for p in parts]),
                   np.concatenate([p.eeff for p in parts]),
                   np.concatenate([p.optimal_goodput for p in parts]))


def solve_batch(channels: np.ndarray, tx: Codebook, rx: Codebook, table: McsTable,
                config: ScenarioConfig) -> LabelBatch:
    rates, eff = goodput_grid(channels, tx, rx, table, config)
    b = len(rates)
    flat_rates = rates.reshape(b, -1)
    best = flat_rates.max(axis=1)
    mask = flat_rates >= (best - config.tie_tolerance * best)[:, None]
    rows, cols = np.nonzero(mask)  # row-major: per sample, grid order
    counts = np.bincount(rows, minlength=b)
    codec = ClassCodec.for_grid(tx, rx, table)
    v, u, m = np.unravel_index(cols, rates.shape[1:])
    return LabelBatch(np.concatenate([[0], np.cumsum(counts)]), codec.encode(v, u, m),
                      eff.reshape(b, -1)[rows, cols], best)


def first_optimal(optimal: OptimalSet) -> ResourceAllocation:
    return optimal.allocations[0]


def max_eeff_optimal(optimal: OptimalSet) -> ResourceAllocation:
    # argmax returns the first maximum, i.e. grid order breaks ties
    return optimal.allocations[int(np.argmax(optimal.eeff_per_allocation))]
