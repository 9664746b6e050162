"""Command-line front end.

Exit codes: 0 success, 2 bad input (spec, config or trace), 3 missing model,
4 a class needed for training is absent.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import autotune, dsp, hierarchy, simgen
from .detect import detect_events
from .errors import MagVehicleError, MissingClassError, StratificationError
from .features import SPECTRAL_FEATURES, TEMPORAL_FEATURES, FEATURE_NAMES
from .pipeline import REPORT_SCHEMA, Pipeline, PipelineConfig, vehicle_pair
from .trace_io import MANIFEST_NAME, read_manifest, read_trace
from .vehicles import TYPE_BIN, TYPE_ORDER

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_MODEL = 3
EXIT_MISSING_CLASS = 4

FEATURE_SETS = {"all": FEATURE_NAMES, "temporal": TEMPORAL_FEATURES, "spectral": SPECTRAL_FEATURES}


class InputError(Exception):
    """Bad user input; mapped to exit code 2."""


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.load(path)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"config {path}: {exc}") from exc


def _is_manifest(path: Path) -> bool:
    return path.is_dir() or path.suffix == ".json"


def _load_inputs(path) -> list:
    """``(name, trace)`` for one trace file or every entry of a manifest, sorted by name."""
    path = Path(path)
    try:
        if _is_manifest(path):
            root = path if path.is_dir() else path.parent
            items = [(e.path, read_trace(root / e.path)) for e in read_manifest(path)]
        else:
            items = [(str(path), read_trace(path))]
    except (OSError, MagVehicleError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return sorted(items, key=lambda it: it[0])


def _labeled(items) -> list:
    missing = [name for name, tr in items if tr.label is None]
    if missing:
        raise InputError(f"{len(missing)} traces lack labels, e.g. {missing[0]}")
    return items


def _analyze(items, pipe: Pipeline):
    """Per labeled trace: (name, label, analysis or None)."""
    out = []
    for name, trace in items:
        try:
            pair = vehicle_pair(trace, pipe.config.detector)
            res = pipe.analyze_pair(pair) if pair is not None else None
        except MagVehicleError:
            res = None
        out.append((name, trace.label, res))
    return out


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    try:
        spec = simgen.FleetSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"fleet spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = simgen.FleetSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    fleet = simgen.synth_fleet(spec)
    manifest = simgen.write_fleet(fleet, args.out)
    counts = Counter(v.truth.vehicle_type for v in fleet)
    for t in TYPE_ORDER:
        print(f"{t.value:12s} {counts.get(t, 0)}")
    print(f"wrote {len(fleet)} traces to {manifest}")
    return EXIT_OK


def cmd_detect(args) -> int:
    config = _load_config(args.config)
    doc = []
    for name, trace in _load_inputs(args.input):
        events = detect_events(trace.samples_a, config.detector)
        doc.append({"trace": name, "events": [e.to_dict() for e in events]})
        print(f"{name}: {len(events)} events")
    if args.out:
        _write_json(args.out, {"traces": doc})
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = _load_config(args.config)
    model_path = args.model or config.model_path
    model = None
    if not args.length_only:
        if model_path is None or not Path(model_path).is_file():
            print(f"error: trained model not found ({model_path}); train one or pass --length-only",
                  file=sys.stderr)
            return EXIT_NO_MODEL
        model = hierarchy.load_hierarchy(model_path)
    pipe = Pipeline(config)
    records, sources = [], []
    labeled_hits = labeled_total = 0
    for name, trace in _load_inputs(args.input):
        recs = pipe.process_trace(trace, model)
        for r in recs:
            records.append(r)
            sources.append(name)
        if trace.label is not None:
            labeled_total += 1
            truth_bin = TYPE_BIN[trace.label.vehicle_type].value
            done = [r for r in recs if r.bin is not None]
            if done:
                main = max(done, key=lambda r: r.event.departure_index - r.event.arrival_index)
                labeled_hits += int(main.bin == truth_bin)
    latencies = [r.latency_s for r in records]
    summary = {
        "vehicles": len(records),
        "failed": sum(r.error is not None for r in records),
        "mean_latency_ms": 1000.0 * float(np.mean(latencies)) if latencies else None,
    }
    if labeled_total:
        summary["bin_accuracy"] = labeled_hits / labeled_total
    docs = [{**r.to_dict(), "trace": src} for r, src in zip(records, sources)]
    _write_json(args.report, {"schema": REPORT_SCHEMA, "records": docs, "summary": summary})
    line = f"{summary['vehicles']} vehicles, {summary['failed']} failed"
    if latencies:
        line += f", mean latency {summary['mean_latency_ms']:.1f} ms"
    if labeled_total:
        line += f", bin accuracy {summary['bin_accuracy']:.4f} on {labeled_total} labeled traces"
    print(line)
    return EXIT_OK


def _training_rows(analyses):
    rows = [res.features for _, _, res in analyses if res is not None]
    labels = [lab.vehicle_type for _, lab, res in analyses if res is not None]
    return rows, labels


def cmd_train(args) -> int:
    config = _load_config(args.config)
    items = _labeled(_load_inputs(args.input))
    analyses = _analyze(items, Pipeline(config))
    rows, labels = _training_rows(analyses)
    params = config.kernel
    try:
        hierarchy.check_classes(labels)
    except MissingClassError as exc:
        print(f"error: no training examples of {exc.class_name}", file=sys.stderr)
        return EXIT_MISSING_CLASS
    if args.cv:
        gammas = [float(g) for g in args.gamma_grid.split(",")]
        cs = [float(c) for c in args.c_grid.split(",")]
        head = hierarchy.SLOTS[0]
        pick = [i for i, l in enumerate(labels) if l in head[1] + head[2]]
        y = [1.0 if labels[i] in head[2] else -1.0 for i in pick]
        columns = [FEATURE_NAMES.index(n) for n in FEATURE_SETS[args.features]]
        x = np.vstack([rows[i].as_array() for i in pick])[:, columns]
        try:
            params = autotune.cross_validate_kernel(x, y, gammas, cs, args.folds, args.seed, params)
        except (StratificationError, ValueError) as exc:
            raise InputError(f"cross-validation: {exc}") from exc
        print(f"cross-validated gamma={params.gamma:g} C={params.c_penalty:g}")
    model = hierarchy.train_hierarchy(rows, labels, params, seed=args.seed,
                                      feature_names=FEATURE_SETS[args.features],
                                      learner=args.learner)
    hierarchy.save_hierarchy(model, args.out)
    skipped = len(analyses) - len(rows)
    print(f"trained on {len(rows)} vehicles ({skipped} skipped); model written to {args.out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _load_config(args.config)
    grid = autotune.TuneGrid()
    if args.grid:
        try:
            grid = autotune.TuneGrid.from_dict(json.loads(Path(args.grid).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"grid {args.grid}: {exc}") from exc
    items = _labeled(_load_inputs(args.input))
    pairs = [vehicle_pair(trace, config.detector) for _, trace in items]
    truth = [TYPE_BIN[trace.label.vehicle_type] for _, trace in items]
    result = autotune.tune_length_params(pairs, truth, grid, config)
    result.write(args.out, args.csv)
    print(f"best lowpass {result.best_lowpass_hz:g} Hz, highpass {result.best_highpass_hz:g} Hz, "
          f"c {result.best_c:g}: {result.train_error_count}/{result.n_vehicles} bin errors "
          f"over {len(result.error_surface)} grid points")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    model_path = args.model or config.model_path
    if model_path is None or not Path(model_path).is_file():
        print(f"error: trained model not found ({model_path})", file=sys.stderr)
        return EXIT_NO_MODEL
    model = hierarchy.load_hierarchy(model_path)
    items = _labeled(_load_inputs(args.input))
    analyses = [a for a in _analyze(items, Pipeline(config)) if a[2] is not None]
    if not analyses:
        raise InputError("no vehicle could be processed")
    rows = [res.features for _, _, res in analyses]
    truth = [lab.vehicle_type for _, lab, _ in analyses]
    bins = [TYPE_BIN[t] for t in truth] if args.oracle_bins else None
    result = hierarchy.evaluate(model, rows, truth, bins)
    csv_path, json_path = result.write(args.out)
    split = hierarchy.error_decomposition(result.matrix)
    unprocessed = len(items) - len(analyses)
    print(f"accuracy {result.accuracy:.4f} ({result.matrix.correct}/{result.matrix.total}); "
          f"errors {split.cross_bin} cross-bin + {split.within_bin} within-bin; "
          f"{unprocessed} unprocessed")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_filter_response(args) -> int:
    config = _load_config(args.config)
    specs = {"bandstop": config.bandstop, "highpass": config.highpass, "lowpass": config.lowpass}
    chosen = list(specs) if args.which == "all" else [args.which]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filter", "freq_hz", "magnitude_db"])
        for name in chosen:
            spec = specs[name]
            filt = dsp.design_filter(spec)
            for f, db in dsp.response_table(filt, spec.sample_rate_hz, args.points):
                writer.writerow([name, repr(f), repr(db)])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_config(args) -> int:
    if args.print_default:
        print(json.dumps(PipelineConfig().to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    print(json.dumps(_load_config(args.config).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magvehicle",
                                     description="Two-sensor magnetic vehicle detection and classification.")
    parser.add_argument("--config", help="pipeline config JSON (defaults are embedded)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic fleet to trace files plus a manifest")
    p.add_argument("spec", help="fleet spec JSON")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="list vehicle events in traces")
    p.add_argument("input", help=f"trace CSV, manifest JSON or a directory holding {MANIFEST_NAME}")
    p.add_argument("--out", help="events JSON")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("pipeline", help="speed, length and type for every detected vehicle")
    p.add_argument("input", help="trace CSV, manifest JSON or directory")
    p.add_argument("report", help="report JSON to write")
    p.add_argument("--model", help="hierarchy model JSON (overrides config model_path)")
    p.add_argument("--length-only", action="store_true", help="skip type classification")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="train the hierarchical model on a labeled manifest")
    p.add_argument("input", help="labeled manifest JSON or directory")
    p.add_argument("out", help="model JSON to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", choices=sorted(FEATURE_SETS), default="all")
    p.add_argument("--learner", choices=("svm", "forest"), default="svm")
    p.add_argument("--cv", action="store_true", help="pick gamma and C by stratified cross-validation")
    p.add_argument("--gamma-grid", default="0.01,0.05,0.111,0.5,1")
    p.add_argument("--c-grid", default="1,10,100")
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="grid-search the length band and fade fraction")
    p.add_argument("input", help="labeled manifest JSON or directory")
    p.add_argument("out", help="tune result JSON to write")
    p.add_argument("--csv", help="error surface CSV")
    p.add_argument("--grid", help="grid JSON (lowpass_pass_hz, highpass_pass_hz, fade_c, folds)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="confusion matrix and precision/recall on a labeled manifest")
    p.add_argument("input", help="labeled manifest JSON or directory")
    p.add_argument("out", help="output stem; writes <stem>.csv and <stem>.json")
    p.add_argument("--model", help="hierarchy model JSON")
    p.add_argument("--oracle-bins", action="store_true", help="route by the true length bin")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("filter-response", help="magnitude responses of the configured filters as CSV")
    p.add_argument("out", help="CSV to write")
    p.add_argument("--which", choices=("bandstop", "highpass", "lowpass", "all"), default="all")
    p.add_argument("--points", type=int, default=512)
    p.set_defaults(func=cmd_filter_response)

    p = sub.add_parser("config", help="show the effective or default config")
    p.add_argument("--print-default", action="store_true")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MissingClassError as exc:
        print(f"error: no training examples of {exc.class_name}", file=sys.stderr)
        return EXIT_MISSING_CLASS


if __name__ == "__main__":
    sys.exit(main())
