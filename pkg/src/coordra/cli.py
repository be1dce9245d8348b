"""Command-line front end: generate, label, dataset, train, eval, sweep, report.

Every stage reads and writes files in the ``--out`` directory, so a run can
be resumed from any stage.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .eval import evaluate_schemes, geometry_predict, calibrate_distance_mcs, write_csv, write_json
from .experiment import (ExperimentSpec, LabelCache, Learners, PopulationSpec, forest_name, labeled_population,
                         make_population, parse_sweep, result_rows, run_experiment)
from .learn.forest import deserialize, model_size, rf_train, serialize
from .learn.knn import KnnModel
from .link import codebooks, default_mcs_table
from .oracle import ClassCodec
from .scenario import Population, ScattererSets, ScenarioConfig


def _config(args) -> ScenarioConfig:
    config = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        config = config.replace(rng_seed=args.seed)
    return config


def _seed(args, config: ScenarioConfig) -> int:
    return config.rng_seed if args.seed is None else args.seed


def _forests(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        trees, _, depth = item.partition(":")
        out.append((int(trees), int(depth)))
    return out


def _pop_spec(args) -> PopulationSpec:
    if args.traces:
        return PopulationSpec("traces", args.traces, args.speed, args.period)
    return PopulationSpec("drops", args.positions)


def _save_population(path: Path, pop: Population) -> None:
    np.savez(path, true=pop.true_positions, est=pop.estimates, offsets=pop.scatterers.offsets,
             scat=pop.scatterers.positions, gains=pop.scatterers.gains, group=pop.group, t=pop.timestamps)


def _load_population(path: Path) -> Population:
    with np.load(path) as z:
        return Population(z["true"], z["est"], ScattererSets(z["offsets"], z["scat"], z["gains"]),
                          z["group"], z["t"])


def _run_config(out: Path) -> ScenarioConfig:
    return ScenarioConfig.load(out / "config.txt")


def _meta(out: Path) -> dict:
    return json.loads((out / "run.json").read_text())


def cmd_generate(args) -> None:
    config = _config(args)
    seed = _seed(args, config)
    spec = _pop_spec(args)
    pop = make_population(config, spec, seed)
    args.out.mkdir(parents=True, exist_ok=True)
    config.save(args.out / "config.txt")
    _save_population(args.out / "population.npz", pop)
    (args.out / "run.json").write_text(json.dumps({"seed": seed, "population": spec.__dict__}, indent=2) + "\n")
    print(f"generated {len(pop)} samples -> {args.out}")


def cmd_label(args) -> None:
    config = _run_config(args.out)
    meta = _meta(args.out)
    spec = PopulationSpec(**meta["population"])
    cache = LabelCache(args.cache or args.out / "cache")
    _, labels = labeled_population(config, spec, meta["seed"], args.jobs, cache)
    np.savez(args.out / "labels.npz", offsets=labels.offsets, class_ids=labels.class_ids, eeff=labels.eeff,
             optimal_goodput=labels.optimal_goodput)
    print(f"labeled {len(labels)} samples, {len(np.unique(labels.class_ids))} distinct optimal classes")


def _load_labels(out: Path):
    from .oracle import LabelBatch
    with np.load(out / "labels.npz") as z:
        return LabelBatch(z["offsets"], z["class_ids"], z["eeff"], z["optimal_goodput"])


def cmd_dataset(args) -> None:
    config = _run_config(args.out)
    meta = _meta(args.out)
    pop = _load_population(args.out / "population.npz")
    labels = _load_labels(args.out)
    tx, rx = codebooks(config)
    codec = ClassCodec.for_grid(tx, rx, default_mcs_table(config))
    train_idx, test_idx = ds.split_positions(len(pop), args.train_fraction, meta["seed"])
    f = args.formulation.upper()
    train = ds.build(pop.estimates[train_idx], labels.take(train_idx), f, codec, "train",
                     pop.group[train_idx], pop.timestamps[train_idx], position=train_idx)
    test = ds.build(pop.estimates[test_idx], labels.take(test_idx), f, codec, "test", position=test_idx)
    ds.serialize(train, args.out / f"train_{f.lower()}.txt")
    ds.serialize(test, args.out / f"test_{f.lower()}.txt")
    counts = train.class_counts()[1]
    print(f"{f}: {len(train)} training rows, {len(test)} test rows, {len(counts)} classes, "
          f"class-size Gini {ds.gini_coefficient(counts):.3f}")


def cmd_train(args) -> None:
    f = args.formulation.lower()
    train = ds.deserialize(args.out / f"train_{f}.txt")
    meta = _meta(args.out)
    forests = _forests(args.forests)
    for trees, depth in forests:
        model = rf_train(train.inputs, train.labels, trees, depth, meta["seed"])
        path = args.out / f"forest_{f}_{trees}_{depth}.bin"
        path.write_bytes(serialize(model))
        print(f"forest ({trees},{depth}): {model_size(model)} bytes -> {path.name}")


def cmd_eval(args) -> None:
    config = _run_config(args.out)
    meta = _meta(args.out)
    f = args.formulation.lower()
    train = ds.deserialize(args.out / f"train_{f}.txt")
    test = ds.deserialize(args.out / f"test_{f}.txt")
    pop = _load_population(args.out / "population.npz").take(test.position)
    tx, rx = codebooks(config)
    preds, sizes = {}, {}
    forests = _forests(args.forests)
    for trees, depth in forests:
        blob = (args.out / f"forest_{f}_{trees}_{depth}.bin").read_bytes()
        name = forest_name(trees, depth, forests[0])
        preds[name] = deserialize(blob).predict(test.inputs)
        sizes[name] = len(blob)
    preds["KNN"] = KnnModel(train.inputs, train.labels, args.k).predict(test.inputs)
    _, _, m = train.codec.decode(train.labels)
    preds["Geometry"] = geometry_predict(test.inputs, config, calibrate_distance_mcs(train.inputs, m, config),
                                         tx, rx, train.codec)
    results = evaluate_schemes(test, pop, config, preds)
    rows = result_rows(results, formulation=f.upper(), seed=meta["seed"])
    for r in rows:
        r["model_bytes"] = sizes.get(r["scheme"])
    write_csv(args.out / f"eval_{f}.csv", rows)
    write_json(args.out / f"eval_{f}.json", {"seed": meta["seed"], "config": config.to_text(), "results": rows})
    _print_rows(rows)


def cmd_sweep(args) -> None:
    config = _config(args)
    axis, values = parse_sweep(args.sweep)
    spec = ExperimentSpec(
        config=config,
        formulations=tuple(f.strip().upper() for f in args.formulation.split(",")),
        learners=Learners(_forests(args.forests), args.k),
        sweep_axis=axis, sweep_values=values, n_positions=args.positions, n_traces=args.traces or 10,
        trace_speed=args.speed, trace_period=args.period, seed=_seed(args, config), jobs=args.jobs,
    )
    rows = run_experiment(spec, args.out, LabelCache(args.cache or args.out / "cache"))
    _print_rows(rows)


def cmd_report(args) -> None:
    """Collect results.csv / eval_*.csv rows under --out into one summary table."""
    import csv

    rows = []
    for path in sorted(args.out.glob("**/*.csv")):
        if path.name == "summary.csv":
            continue
        with open(path) as fh:
            for r in csv.DictReader(fh):
                if "avg_goodput" in r:
                    r["source"] = str(path.relative_to(args.out))
                    rows.append(r)
    if not rows:
        raise SystemExit(f"no result tables under {args.out}")
    by_group: dict[tuple, float] = {}
    for r in rows:
        if r["scheme"] == "CSI":
            by_group[(r["source"], r.get("value", ""), r.get("formulation", ""))] = float(r["avg_goodput"])
    for r in rows:
        csi = by_group.get((r["source"], r.get("value", ""), r.get("formulation", "")))
        r["ratio_to_csi"] = repr(float(r["avg_goodput"]) / csi) if csi else ""
    write_csv(args.out / "summary.csv", rows)
    _print_rows(rows)


def _print_rows(rows) -> None:
    for r in rows:
        label = " ".join(str(r[k]) for k in ("source", "axis", "value", "formulation") if r.get(k) not in (None, ""))
        print(f"{label:30s} {r['scheme']:10s} goodput {float(r['avg_goodput']):.4e}  "
              f"acc {float(r['test_accuracy']):.3f}  perf-adj {float(r['perf_adjusted_accuracy']):.3f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coordra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", type=Path, required=True, help="run directory")
        if config:
            p.add_argument("--config", type=Path, help="scenario config file (key = value lines)")
            p.add_argument("--seed", type=int, help="master seed (default: rng_seed from the config)")

    def population(p):
        p.add_argument("--positions", type=int, default=20_000, help="random drops (default 20000)")
        p.add_argument("--traces", type=int, default=0, help="number of straight-line traces instead of drops")
        p.add_argument("--speed", type=float, default=15.0, help="trace speed, m/s")
        p.add_argument("--period", type=float, default=1e-3, help="trace sampling period, s")

    def learners(p):
        p.add_argument("--forests", default="100:15", help="trees:depth list, e.g. 100:15,100:5")
        p.add_argument("--k", type=int, default=1, help="KNN neighbour count")

    p = sub.add_parser("generate", help="draw terminal positions, scatterers and position estimates")
    common(p)
    population(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="solve for the optimal allocations of every sample")
    common(p, config=False)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache", type=Path, help="label cache directory (default: <out>/cache)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("dataset", help="build and split a D1/D2/D3 dataset")
    common(p, config=False)
    p.add_argument("--formulation", choices=["d1", "d2", "d3"], default="d2")
    p.add_argument("--train-fraction", type=float, default=2 / 3)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train random forests on a built dataset")
    common(p, config=False)
    p.add_argument("--formulation", choices=["d1", "d2", "d3"], default="d2")
    learners(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score CSI, RF, KNN and geometry schemes on the test split")
    common(p, config=False)
    p.add_argument("--formulation", choices=["d1", "d2", "d3"], default="d2")
    learners(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="full pipeline over one sweep axis")
    common(p)
    population(p)
    learners(p)
    p.add_argument("--formulation", default="d2", help="comma list of d1,d2,d3")
    p.add_argument("--sweep", help="axis=v1,v2,... (sigma, rho, antennas, sample_count, traces, undersample_period)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache", type=Path, help="label cache directory (default: <out>/cache)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="merge result tables under --out into summary.csv")
    common(p, config=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"coordra {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
