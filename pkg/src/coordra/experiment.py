"""End-to-end pipeline pieces shared by the CLI and the acceptance suite."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .channel import channel_batch
from .eval import (SchemeResult, calibrate_distance_mcs, evaluate_schemes, geometry_predict,
                   time_prediction, time_training)
from .learn.forest import ForestModel, model_size, rf_train
from .learn.knn import KnnModel
from .link import codebooks, default_mcs_table
from .oracle import ClassCodec, LabelBatch, solve_batch
from .scenario import Population, ScenarioConfig, drop_population, trace_population

CHUNK = 256


@dataclass(frozen=True)
class PopulationSpec:
    """How a population is generated; part of the label cache key."""

    kind: str = "drops"  # or "traces"
    count: int = 20_000  # drops, or number of traces
    speed: float = 15.0
    period: float = 1e-3

    def key(self) -> str:
        if self.kind == "drops":
            return f"drops-{self.count}"
        return f"traces-{self.count}-{self.speed!r}-{self.period!r}"


def make_population(config: ScenarioConfig, spec: PopulationSpec, seed: int) -> Population:
    if spec.kind == "drops":
        return drop_population(config, spec.count, seed)
    if spec.kind == "traces":
        return trace_population(config, spec.count, spec.speed, spec.period, seed)
    raise ValueError(f"unknown population kind {spec.kind!r}")


def _label_chunk(args) -> LabelBatch:
    config, population = args
    tx, rx = codebooks(config)
    h = channel_batch(config, population.true_positions, population.scatterers)
    return solve_batch(h, tx, rx, default_mcs_table(config), config)


def label_population(config: ScenarioConfig, population: Population, jobs: int = 1,
                     chunk: int = CHUNK) -> LabelBatch:
    """Oracle labels for every sample, computed chunk-wise on ``jobs`` workers
    and merged in sample order."""
    n = len(population)
    parts = [(config, population.take(np.arange(a, min(a + chunk, n)))) for a in range(0, n, chunk)]
    if jobs > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_label_chunk, parts))
    else:
        results = [_label_chunk(p) for p in parts]
    return LabelBatch.concat(results)


def label_channel_only_config(config: ScenarioConfig) -> ScenarioConfig:
    # position noise does not change labels: they come from true positions
    return config.replace(position_error_sigma=0.0)


class LabelCache:
    """Oracle labels on disk, keyed by the config digest, seed and population spec."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, config: ScenarioConfig, spec: PopulationSpec, seed: int) -> Path:
        cfg = label_channel_only_config(config)
        key = hashlib.sha256(f"{cfg.digest()}|{seed}|{spec.key()}".encode()).hexdigest()[:20]
        return self.root / f"labels-{key}.npz"

    def load(self, config, spec, seed) -> LabelBatch | None:
        p = self.path(config, spec, seed)
        if not p.exists():
            return None
        with np.load(p) as z:
            return LabelBatch(z["offsets"], z["class_ids"], z["eeff"], z["optimal_goodput"])

    def store(self, config, spec, seed, labels: LabelBatch) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(config, spec, seed)
        tmp = p.with_name(p.name + f".{os.getpid()}.tmp.npz")
        np.savez(tmp, offsets=labels.offsets, class_ids=labels.class_ids, eeff=labels.eeff,
                 optimal_goodput=labels.optimal_goodput)
        os.replace(tmp, p)


def labeled_population(config: ScenarioConfig, spec: PopulationSpec, seed: int, jobs: int = 1,
                       cache: LabelCache | None = None) -> tuple[Population, LabelBatch]:
    population = make_population(config, spec, seed)
    labels = cache.load(config, spec, seed) if cache else None
    if labels is None or len(labels) != len(population):
        labels = label_population(config, population, jobs)
        if cache:
            cache.store(config, spec, seed, labels)
    return population, labels


@dataclass
class Learners:
    forests: list[tuple[int, int]] = field(default_factory=lambda: [(100, 15)])
    knn_k: int = 1
    timing_repeats: int = 1


@dataclass
class CaseResult:
    results: dict[str, SchemeResult]
    train: ds.Dataset
    test: ds.Dataset
    models: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)


def forest_name(n_trees: int, depth: int, default: tuple[int, int]) -> str:
    return "RF" if (n_trees, depth) == default else f"RF({n_trees},{depth})"


def build_split(config: ScenarioConfig, population: Population, labels: LabelBatch, formulation: str,
                seed: int, train_fraction: float = 2 / 3, provenance=None):
    """Datasets for one case, split by position. Returns (train, test, test_index)."""
    tx, rx = codebooks(config)
    codec = ClassCodec.for_grid(tx, rx, default_mcs_table(config))
    train_idx, test_idx = ds.split_positions(len(population), train_fraction, seed)
    train = ds.build(population.estimates[train_idx], labels.take(train_idx), formulation, codec, "train",
                     population.group[train_idx], population.timestamps[train_idx], provenance,
                     position=train_idx)
    test = ds.build(population.estimates[test_idx], labels.take(test_idx), formulation, codec, "test",
                    position=test_idx)
    return train, test, test_idx


def train_and_predict(config: ScenarioConfig, train: ds.Dataset, test_inputs: np.ndarray,
                      learners: Learners, seed: int) -> tuple[dict, dict, dict]:
    """Fit every learner plus the geometry calibration; predict the test inputs.

    Returns predictions, (train_time, predict_time) per scheme, and models.
    """
    tx, rx = codebooks(config)
    codec = train.codec
    preds, timings, models = {}, {}, {}
    default = learners.forests[0]
    for n_trees, depth in learners.forests:
        name = forest_name(n_trees, depth, default)
        t_train, model = time_training(lambda: rf_train(train.inputs, train.labels, n_trees, depth, seed),
                                       learners.timing_repeats)
        t_pred, out = time_prediction(model.predict, test_inputs)
        preds[name], timings[name], models[name] = out, (t_train, t_pred), model
    t_train, knn = time_training(lambda: KnnModel(train.inputs, train.labels, learners.knn_k),
                                 learners.timing_repeats)
    t_pred, out = time_prediction(knn.predict, test_inputs)
    preds["KNN"], timings["KNN"], models["KNN"] = out, (t_train, t_pred), knn
    _, _, m = codec.decode(train.labels)
    table = calibrate_distance_mcs(train.inputs, m, config)
    preds["Geometry"] = geometry_predict(test_inputs, config, table, tx, rx, codec)
    models["Geometry"] = table
    return preds, timings, models


def run_case(config: ScenarioConfig, population: Population, labels: LabelBatch, formulation: str,
             learners: Learners, seed: int, train_fraction: float = 2 / 3) -> CaseResult:
    train, test, test_idx = build_split(config, population, labels, formulation, seed, train_fraction)
    preds, timings, models = train_and_predict(config, train, test.inputs, learners, seed)
    results = evaluate_schemes(test, population.take(test_idx), config, preds, timings)
    return CaseResult(results, train, test, models, preds)


def result_rows(results: dict[str, SchemeResult], **context) -> list[dict]:
    rows = []
    for name, r in results.items():
        row = dict(context)
        row.update(r.summary())
        rows.append(row)
    return rows


def forest_bytes(models: dict) -> dict[str, int]:
    return {k: model_size(m) for k, m in models.items() if isinstance(m, ForestModel)}


# --- sweeps -------------------------------------------------------------------

SWEEP_AXES = ("none", "sigma", "rho", "antennas", "sample_count", "traces", "undersample_period")


def parse_sweep(text: str | None) -> tuple[str, list]:
    """``axis=v1,v2,...`` into (axis, values); None means no sweep."""
    if not text:
        return "none", [None]
    axis, sep, values = text.partition("=")
    axis = axis.strip()
    if axis not in SWEEP_AXES or not sep and axis != "none":
        raise ValueError(f"sweep must be <axis>=<list> with axis in {', '.join(SWEEP_AXES)}")
    if axis == "none":
        return axis, [None]
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise ValueError(f"empty value list for sweep axis {axis}")
    out = []
    for item in items:
        if axis == "antennas":
            ar, x, au = item.lower().partition("x")
            if not x:
                raise ValueError(f"antenna sweep values look like 8x2, got {item!r}")
            out.append((int(ar), int(au)))
        elif axis in ("sample_count", "traces"):
            out.append(int(item))
        else:
            out.append(float(item))
    return axis, out


@dataclass
class ExperimentSpec:
    config: ScenarioConfig
    formulations: tuple[str, ...] = ("D2",)
    learners: Learners = field(default_factory=Learners)
    sweep_axis: str = "none"
    sweep_values: list = field(default_factory=lambda: [None])
    n_positions: int = 20_000
    n_traces: int = 10
    trace_speed: float = 15.0
    trace_period: float = 1e-3
    train_fraction: float = 2 / 3
    seed: int = 0
    jobs: int = 1


def _point_config(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "sigma":
        return config.replace(position_error_sigma=value)
    if axis == "rho":
        return config.replace(scatterer_density=value)
    if axis == "antennas":
        return config.replace(tx_antennas=value[0], rx_antennas=value[1])
    return config


def run_point(spec: ExperimentSpec, axis: str, value, cache: LabelCache | None = None) -> list[dict]:
    """Every formulation at one sweep point; one report row per scheme."""
    config = _point_config(spec.config, axis, value)
    drops = PopulationSpec("drops", spec.n_positions)
    population, labels = labeled_population(config, drops, spec.seed, spec.jobs, cache)
    rows = []
    for formulation in spec.formulations:
        train, test, test_idx = build_split(config, population, labels, formulation, spec.seed,
                                            spec.train_fraction)
        if axis == "sample_count":
            keep = np.flatnonzero(np.isin(train.position, np.sort(np.unique(train.position))[:value]))
            train = train.take(keep)
        elif axis in ("traces", "undersample_period"):
            n_traces = value if axis == "traces" else spec.n_traces
            tspec = PopulationSpec("traces", n_traces, spec.trace_speed, spec.trace_period)
            tpop, tlab = labeled_population(config, tspec, spec.seed, spec.jobs, cache)
            codec = train.codec
            prov = ds.Provenance("traces", n_traces, spec.trace_speed, spec.trace_period)
            train = ds.build(tpop.estimates, tlab, formulation, codec, "train", tpop.group,
                             tpop.timestamps, prov)
            if axis == "undersample_period":
                train = ds.undersample(train, value * 1e-3)
        preds, timings, models = train_and_predict(config, train, test.inputs, spec.learners, spec.seed)
        results = evaluate_schemes(test, population.take(test_idx), config, preds, timings)
        sizes = forest_bytes(models)
        for row in result_rows(results, axis=axis, value=_value_text(value), formulation=formulation,
                               seed=spec.seed, train_samples=len(train), test_samples=len(test),
                               config_digest=config.digest()):
            row["model_bytes"] = sizes.get(row["scheme"])
            rows.append(row)
    return rows


def _value_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    return str(value)


def run_experiment(spec: ExperimentSpec, out_dir, cache: LabelCache | None = None) -> list[dict]:
    """Run every sweep point, writing results.csv and report.json to out_dir.

    Rows finished before a failure are still written.
    """
    from .eval import write_csv, write_json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    try:
        for value in spec.sweep_values:
            rows.extend(run_point(spec, spec.sweep_axis, value, cache))
    finally:
        write_csv(out / "results.csv", rows)
        write_json(out / "report.json", {
            "seed": spec.seed, "sweep_axis": spec.sweep_axis,
            "sweep_values": [_value_text(v) for v in spec.sweep_values],
            "formulations": list(spec.formulations), "forests": spec.learners.forests,
            "knn_k": spec.learners.knn_k, "n_positions": spec.n_positions,
            "config": spec.config.to_text(), "results": rows,
            "complete": len(rows) == len(spec.sweep_values) * len(spec.formulations)
            * (len(spec.learners.forests) + 3),
        })
    return rows
