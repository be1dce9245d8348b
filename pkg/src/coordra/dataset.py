"""Training and test datasets under the D1, D2 and D3 labeling rules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oracle import ClassCodec, LabelBatch, ResourceAllocation
from .scenario import SPLIT, stream

FORMULATIONS = ("D1", "D2", "D3")
FORMAT_TAG = "coordra-dataset 1"


@dataclass(frozen=True)
class Provenance:
    kind: str = "uncorrelated"  # or "traces"
    count: int = 0
    speed: float = 0.0
    period: float = 0.0  # seconds

    def __post_init__(self):
        if self.kind not in ("uncorrelated", "traces"):
            raise ValueError(f"unknown provenance {self.kind!r}")

    def to_text(self) -> str:
        if self.kind == "uncorrelated":
            return "uncorrelated"
        return f"traces {self.count} {self.speed!r} {self.period!r}"

    @classmethod
    def from_text(cls, text: str) -> "Provenance":
        parts = text.split()
        if parts == ["uncorrelated"]:
            return cls()
        if len(parts) == 4 and parts[0] == "traces":
            return cls("traces", int(parts[1]), float(parts[2]), float(parts[3]))
        raise ValueError(f"bad provenance {text!r}")


@dataclass(frozen=True)
class Sample:
    input: tuple[float, float]
    label: int
    label_set: tuple[int, ...]


@dataclass
class Dataset:
    """Rows of (estimated position, label); label sets in CSR layout.

    ``position`` links each row to its source position so D3 expansions of
    one position can be kept together; ``group`` is the trace index (-1 for
    random drops) and ``timestamp`` the sampling time within the trace.
    """

    formulation: str
    inputs: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n,)
    set_offsets: np.ndarray  # (n + 1,)
    set_ids: np.ndarray
    position: np.ndarray  # (n,)
    group: np.ndarray  # (n,)
    timestamp: np.ndarray  # (n,)
    codec: ClassCodec
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        arrays = ("inputs", "labels", "set_offsets", "set_ids", "position", "group", "timestamp")
        return (self.formulation == other.formulation and self.codec == other.codec
                and self.provenance == other.provenance
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))

    def label_set(self, i: int) -> np.ndarray:
        return self.set_ids[self.set_offsets[i]:self.set_offsets[i + 1]]

    def sample(self, i: int) -> Sample:
        return Sample((float(self.inputs[i, 0]), float(self.inputs[i, 1])), int(self.labels[i]),
                      tuple(int(c) for c in self.label_set(i)))

    def samples(self):
        return (self.sample(i) for i in range(len(self)))

    @property
    def class_registry(self) -> dict[int, ResourceAllocation]:
        ids = np.unique(np.concatenate([self.labels, self.set_ids]))
        return {int(c): ResourceAllocation.from_class(self.codec, int(c)) for c in ids}

    def in_label_set(self, predicted) -> np.ndarray:
        """Whether each row's prediction is among that row's optima."""
        predicted = np.asarray(predicted, dtype=np.int64)
        counts = np.diff(self.set_offsets)
        hit = self.set_ids == np.repeat(predicted, counts)
        return np.add.reduceat(hit, self.set_offsets[:-1]) > 0 if len(hit) else np.zeros(len(self), bool)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        counts = np.diff(self.set_offsets)[rows]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        flat = np.repeat(self.set_offsets[:-1][rows], counts) + (
            np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts))
        return Dataset(self.formulation, self.inputs[rows], self.labels[rows], offsets,
                       self.set_ids[flat], self.position[rows], self.group[rows],
                       self.timestamp[rows], self.codec, self.provenance)

    def class_counts(self) -> tuple[np.ndarray, np.ndarray]:
        return np.unique(self.labels, return_counts=True)


def build(inputs, labels: LabelBatch, formulation: str, codec: ClassCodec, role: str = "train",
          group=None, timestamp=None, provenance: Provenance | None = None,
          position=None) -> Dataset:
    """Turn oracle output into a dataset.

    D1 labels each position with its first optimum in grid order, D2 with the
    optimum of highest effective SNR. D3 training data repeats the position
    once per optimum; D3 test data carries one row per position labeled like
    D1. Every row keeps the full optimum set.
    """
    formulation = formulation.upper()
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    if role not in ("train", "test"):
        raise ValueError("role must be 'train' or 'test'")
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 2)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot build a dataset from no samples")
    if len(inputs) != n:
        raise ValueError("inputs and labels differ in length")
    group = np.full(n, -1, dtype=np.int64) if group is None else np.asarray(group, dtype=np.int64)
    timestamp = np.zeros(n) if timestamp is None else np.asarray(timestamp, dtype=float)
    position = np.arange(n, dtype=np.int64) if position is None else np.asarray(position, dtype=np.int64)
    provenance = provenance or Provenance()

    if formulation == "D3" and role == "train":
        counts = np.diff(labels.offsets)
        rows = np.repeat(np.arange(n), counts)
        sub = labels.take(rows)
        return Dataset(formulation, inputs[rows], labels.class_ids.copy(), sub.offsets, sub.class_ids,
                       position[rows], group[rows], timestamp[rows], codec, provenance)
    y = labels.max_eeff() if formulation == "D2" else labels.first()
    return Dataset(formulation, inputs.copy(), y, labels.offsets.copy(), labels.class_ids.copy(),
                   position, group, timestamp, codec, provenance)


def split_positions(n_positions: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random position split; the training side gets floor(n * fraction) positions."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    perm = stream(seed, SPLIT).permutation(n_positions)
    n_train = int(math.floor(n_positions * train_fraction + 1e-9))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split by source position. The test side has one row per position; for
    D3 its label is the first optimum."""
    positions = np.unique(dataset.position)
    train_pos, _ = split_positions(len(positions), train_fraction, seed)
    on_train = np.isin(dataset.position, positions[train_pos])
    train = dataset.take(np.flatnonzero(on_train))
    test_rows = np.flatnonzero(~on_train)
    _, first = np.unique(dataset.position[test_rows], return_index=True)
    test = dataset.take(test_rows[first])
    if dataset.formulation == "D3":
        test.labels = test.set_ids[test.set_offsets[:-1]].copy()
    return train, test


def undersample(dataset: Dataset, period: float) -> Dataset:
    """Keep every k-th sample of each trace, k = period / native period.

    ``period`` is in seconds, like the provenance.
    """
    prov = dataset.provenance
    if prov.kind != "traces":
        raise ValueError("undersampling needs a trace dataset")
    ratio = period / prov.period
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"period {period} is not a whole multiple of {prov.period}")
    step = np.rint(dataset.timestamp / prov.period).astype(np.int64)
    out = dataset.take(np.flatnonzero(step % k == 0))
    out.provenance = Provenance("traces", prov.count, prov.speed, prov.period * k)
    return out


def gini_coefficient(counts) -> float:
    """Inequality of a class-size distribution: 0 when uniform, toward 1 when concentrated."""
    x = np.sort(np.asarray(counts, dtype=float))
    n = len(x)
    if n == 0 or x.sum() == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float(2 * np.sum(ranks * x) / (n * x.sum()) - (n + 1) / n)


def serialize(dataset: Dataset, path) -> None:
    lines = [
        f"format: {FORMAT_TAG}",
        f"formulation: {dataset.formulation}",
        f"provenance: {dataset.provenance.to_text()}",
        f"grid: {dataset.codec.n_tx} {dataset.codec.n_rx} {dataset.codec.n_mcs}",
    ]
    for cid, alloc in dataset.class_registry.items():
        lines.append(f"class: {cid} {alloc.v_idx} {alloc.u_idx} {alloc.m_idx}")
    lines.append("data: x,y,label,label_set,position,group,timestamp")
    for i in range(len(dataset)):
        x, y = (float(v) for v in dataset.inputs[i])
        members = ";".join(str(c) for c in dataset.label_set(i))
        lines.append(f"{x!r},{y!r},{dataset.labels[i]},{members},{dataset.position[i]},"
                     f"{dataset.group[i]},{float(dataset.timestamp[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def deserialize(path) -> Dataset:
    text = Path(path).read_text().splitlines()
    header: dict[str, str] = {}
    registry: dict[int, tuple[int, int, int]] = {}
    body_start = None
    for lineno, line in enumerate(text, 1):
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected a header line")
        value = value.strip()
        if key == "class":
            parts = value.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: bad class entry")
            registry[int(parts[0])] = tuple(int(p) for p in parts[1:])
        elif key == "data":
            body_start = lineno
            break
        else:
            header[key] = value
    if body_start is None or header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a dataset file")
    codec = ClassCodec(*(int(v) for v in header["grid"].split()))
    for cid, triple in registry.items():
        if codec.decode(cid) != triple:
            raise ValueError(f"{path}: class {cid} does not match its allocation")

    inputs, labels, offsets, ids, position, group, stamp = [], [], [0], [], [], [], []
    for lineno, line in enumerate(text[body_start:], body_start + 1):
        if not line.strip():
            continue
        cols = line.split(",")
        try:
            if len(cols) != 7:
                raise ValueError("expected 7 columns")
            members = [int(c) for c in cols[3].split(";") if c]
            if not members:
                raise ValueError("empty label set")
            if len(set(members)) != len(members):
                raise ValueError("duplicate label in label set")
            label = int(cols[2])
            if label not in members:
                raise ValueError("label not in its label set")
            unknown = [c for c in members if c not in registry]
            if unknown:
                raise ValueError(f"class {unknown[0]} missing from registry")
            inputs.append((float(cols[0]), float(cols[1])))
            labels.append(label)
            ids.extend(members)
            offsets.append(len(ids))
            position.append(int(cols[4]))
            group.append(int(cols[5]))
            stamp.append(float(cols[6]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return Dataset(header["formulation"], np.array(inputs, dtype=float).reshape(-1, 2),
                   np.array(labels, dtype=np.int64), np.array(offsets, dtype=np.int64),
                   np.array(ids, dtype=np.int64), np.array(position, dtype=np.int64),
                   np.array(group, dtype=np.int64), np.array(stamp, dtype=float), codec,
                   Provenance.from_text(header["provenance"]))
