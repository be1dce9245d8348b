"""Scheme evaluation: goodput scoring on true channels, accuracies, confusion
matrices, the geometry baseline and timing."""
from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import channel_batch
from .dataset import Dataset
from .link import Codebook, McsTable, codebooks, default_mcs_table, goodput_grid
from .oracle import ClassCodec, ResourceAllocation, solve_batch
from .scenario import Population, ScenarioConfig

SCHEMES = ("CSI", "RF", "KNN", "Geometry")


@dataclass
class SchemeResult:
    scheme: str
    avg_goodput: float
    test_accuracy: float
    perf_adjusted_accuracy: float
    confusion: np.ndarray | None = field(default=None, repr=False)
    train_time: float | None = None
    predict_time_per_sample: float | None = None
    per_sample_goodput: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("confusion")
        out.pop("per_sample_goodput")
        return out


# --- goodput scoring ---------------------------------------------------------

@dataclass
class Scores:
    optimal: np.ndarray  # (n,) grid maximum per sample
    achieved: dict[str, np.ndarray]  # scheme -> (n,) goodput of its allocation


def score_predictions(config: ScenarioConfig, population: Population, predictions: dict[str, np.ndarray],
                      tx: Codebook | None = None, rx: Codebook | None = None,
                      table: McsTable | None = None, chunk: int = 256) -> Scores:
    """Goodput of each predicted allocation on the sample's true channel.

    The optimum and the predicted cells are read from one goodput grid, so a
    prediction can never beat the optimum through rounding.
    """
    if tx is None or rx is None:
        tx, rx = codebooks(config)
    table = table or default_mcs_table(config)
    codec = ClassCodec.for_grid(tx, rx, table)
    n = len(population)
    decoded = {k: codec.decode(np.asarray(v, dtype=np.int64).reshape(n)) for k, v in predictions.items()}
    optimal = np.empty(n)
    achieved = {k: np.empty(n) for k in predictions}
    for a in range(0, n, chunk):
        part = population.take(np.arange(a, min(a + chunk, n)))
        rates, _ = goodput_grid(channel_batch(config, part.true_positions, part.scatterers),
                                tx, rx, table, config)
        rows = np.arange(len(rates))
        optimal[a:a + len(rates)] = rates.reshape(len(rates), -1).max(axis=1)
        for k, (v, u, m) in decoded.items():
            sl = slice(a, a + len(rates))
            achieved[k][sl] = rates[rows, v[sl], u[sl], m[sl]]
    return Scores(optimal, achieved)


def evaluate(scheme: str, predictions, test: Dataset, scores: Scores, classes=None,
             train_time: float | None = None, predict_time: float | None = None) -> SchemeResult:
    """Accuracy against the dataset label, performance-adjusted accuracy
    against the full optimum set and mean goodput on the true channels."""
    if scheme == "CSI":
        goodput = scores.optimal
        predictions = test.labels
    else:
        goodput = scores.achieved[scheme]
    predictions = np.asarray(predictions, dtype=np.int64)
    n = len(test)
    return SchemeResult(
        scheme=scheme,
        avg_goodput=float(goodput.mean()) if n else float("nan"),
        test_accuracy=float(np.mean(predictions == test.labels)) if n else float("nan"),
        perf_adjusted_accuracy=float(np.mean(test.in_label_set(predictions))) if n else float("nan"),
        confusion=confusion_matrix(predictions, test.labels, classes)[0],
        train_time=train_time,
        predict_time_per_sample=predict_time,
        per_sample_goodput=goodput,
    )


def evaluate_schemes(test: Dataset, population: Population, config: ScenarioConfig,
                     predictions: dict[str, np.ndarray], timings: dict | None = None,
                     tx=None, rx=None, table=None) -> dict[str, SchemeResult]:
    """CSI plus every named prediction set, all scored in one pass."""
    timings = timings or {}
    scores = score_predictions(config, population, predictions, tx, rx, table)
    out = {"CSI": evaluate("CSI", None, test, scores)}
    for name, pred in predictions.items():
        tt, pt = timings.get(name, (None, None))
        out[name] = evaluate(name, pred, test, scores, train_time=tt, predict_time=pt)
    return out


def confusion_matrix(predictions, labels, classes=None) -> tuple[np.ndarray, np.ndarray]:
    """Rows are true classes, columns predicted. With a class subset, rows
    cover only samples whose true class is in it and an extra last column
    counts predictions outside the subset."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    subset = classes is not None
    classes = np.unique(np.concatenate([labels, predictions])) if not subset else np.asarray(classes, dtype=np.int64)
    k = len(classes)
    pos = {int(c): i for i, c in enumerate(classes)}
    mat = np.zeros((k, k + subset), dtype=np.int64)
    for t, p in zip(labels.tolist(), predictions.tolist()):
        r = pos.get(t)
        if r is None:
            continue
        mat[r, pos.get(p, k)] += 1
    return mat, classes


# --- geometry baseline -------------------------------------------------------

@dataclass(frozen=True)
class DistanceMcsTable:
    edges: np.ndarray  # (bins - 1,) interior decile edges in meters
    mcs: np.ndarray  # (bins,) 0-based MCS index per bin

    def lookup(self, distance) -> np.ndarray:
        return self.mcs[np.searchsorted(self.edges, distance, side="right")]


def bs_distance(positions, config: ScenarioConfig) -> np.ndarray:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    bs = np.asarray(config.bs_position)
    dz = config.terminal_height - bs[2]
    return np.sqrt((positions[:, 0] - bs[0]) ** 2 + (positions[:, 1] - bs[1]) ** 2 + dz ** 2)


def calibrate_distance_mcs(positions, optimal_mcs, config: ScenarioConfig, bins: int = 10) -> DistanceMcsTable:
    """Decile bins of BS distance, each mapped to its most common optimal MCS
    (lower MCS on ties). Empty bins copy the nearest filled bin."""
    d = bs_distance(positions, config)
    optimal_mcs = np.asarray(optimal_mcs, dtype=np.int64)
    if len(d) == 0:
        raise ValueError("need labeled training positions")
    edges = np.quantile(d, np.arange(1, bins) / bins)
    which = np.searchsorted(edges, d, side="right")
    mcs = np.full(bins, -1, dtype=np.int64)
    for b in range(bins):
        members = optimal_mcs[which == b]
        if len(members):
            mcs[b] = np.argmax(np.bincount(members))
    filled = np.flatnonzero(mcs >= 0)
    for b in np.flatnonzero(mcs < 0):
        mcs[b] = mcs[filled[np.argmin(np.abs(filled - b))]]
    return DistanceMcsTable(edges, mcs)


def _closest(angles_deg: np.ndarray, target_deg: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum: equidistant beams go to the lower index
    return np.argmin(np.abs(angles_deg[None, :] - target_deg[:, None]), axis=1)


def geometry_predict(positions, config: ScenarioConfig, mcs_table: DistanceMcsTable,
                     tx: Codebook, rx: Codebook, codec: ClassCodec) -> np.ndarray:
    """Class ids chosen from the estimated position alone.

    Beams are matched on azimuth folded onto the array's [0, 180] degree
    angle range (a linear array cannot tell the two sides apart).
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    bs = np.asarray(config.bs_position)
    dx, dy = positions[:, 0] - bs[0], positions[:, 1] - bs[1]
    to_terminal = np.abs(np.degrees(np.arctan2(dy, dx)))
    to_bs = np.abs(np.degrees(np.arctan2(-dy, -dx)))
    v = _closest(tx.angles, to_terminal)
    u = _closest(rx.angles, to_bs)
    m = mcs_table.lookup(bs_distance(positions, config))
    return codec.encode(v, u, m)


def geometry_scheme(p_hat, config: ScenarioConfig, mcs_table: DistanceMcsTable,
                    tx: Codebook | None = None, rx: Codebook | None = None,
                    n_mcs: int | None = None) -> ResourceAllocation:
    if tx is None or rx is None:
        tx, rx = codebooks(config)
    codec = ClassCodec(len(tx), len(rx), n_mcs or len(default_mcs_table(config)))
    cid = int(geometry_predict(np.asarray(p_hat)[None], config, mcs_table, tx, rx, codec)[0])
    return ResourceAllocation.from_class(codec, cid)


def calibrate_mcs_offset(config: ScenarioConfig, point=None, step_db: float = 0.1,
                         span_db: float = 10.0) -> float:
    """Threshold offset putting the LoS optimum at ``point`` (mid-street by
    default) on the middle MCS entry. Among offsets that do, the one closest
    to zero is returned."""
    point = np.array([config.street_width / 2, config.street_length / 2] if point is None else point)
    base = config.replace(scatterer_density=0.0, max_scatterers=None, mcs_threshold_offset_db=0.0)
    tx, rx = codebooks(base)
    h = channel_batch(base, point[None])
    offsets = np.arange(-span_db, span_db + step_db / 2, step_db)
    offsets = offsets[np.argsort(np.abs(offsets), kind="stable")]
    target = len(default_mcs_table(base)) // 2
    for off in offsets:
        cfg = base.replace(mcs_threshold_offset_db=float(round(off, 10)))
        table = default_mcs_table(cfg)
        labels = solve_batch(h, tx, rx, table, cfg)
        _, _, m = ClassCodec.for_grid(tx, rx, table).decode(int(labels.first()[0]))
        if m == target:
            return float(round(off, 10))
    raise RuntimeError("no offset within range puts the mid-street optimum mid-table")


# --- timing --------------------------------------------------------------------

def time_training(train_fn, repeats: int = 5):
    """Median wall-clock seconds over ``repeats`` runs, and the last result."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    times, result = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = train_fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), result


def time_prediction(predict_fn, queries) -> tuple[float | None, np.ndarray | None]:
    """Per-sample prediction seconds (total / count), or None for no queries."""
    queries = np.asarray(queries)
    if len(queries) == 0:
        return None, None
    t0 = time.perf_counter()
    out = predict_fn(queries)
    return (time.perf_counter() - t0) / len(queries), out


# --- reports ---------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0])
    for r in rows[1:]:
        fields.extend(k for k in r if k not in fields)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fields})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
