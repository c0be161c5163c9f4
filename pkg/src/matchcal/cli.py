"""Command-line entry point: ``matchcal simulate|pipeline|match|calibrate``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .calibrate import calibrate_weights, read_targets_csv
from .errors import MatchcalError, ParameterError, SchemaError
from .matching import nn_match
from .montecarlo import StudyConfig, default_threads, preset, run_study
from .pipeline import PipelineSpec, pipeline_json, run_pipeline

ID_COLUMNS = ("id", "unit_id")


def _threads(value) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation study")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="StudyConfig JSON file")
    src.add_argument("--study", type=int, choices=(1, 2), help="built-in study preset")
    sim.add_argument("--reps", type=int, help="number of replicates")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--out", help="JSON report path (a .txt table is written alongside)")
    sim.add_argument("--threads", type=_threads, help="worker threads (default: $MATCHCAL_THREADS or 1)")

    pipe = sub.add_parser("pipeline", help="run the microdata pipeline")
    pipe.add_argument("spec", help="PipelineSpec JSON file")
    pipe.add_argument("--reps", type=int)
    pipe.add_argument("--seed", type=int)
    pipe.add_argument("--out")
    pipe.add_argument("--threads", type=_threads)

    m = sub.add_parser("match", help="nearest-neighbour match two covariate files")
    m.add_argument("target", help="CSV of probability-sample units (optional id, pi columns)")
    m.add_argument("pool", help="CSV of pool units (optional id column)")
    m.add_argument("--replace", action="store_true", help="match with replacement")
    m.add_argument("--standardize", choices=("auto", "yes", "no"), default="auto")
    m.add_argument("--out", help="output CSV (default stdout)")

    c = sub.add_parser("calibrate", help="calibrate weights to known totals")
    c.add_argument("weights", help="CSV with a 'weight' column and one column per target name")
    c.add_argument("targets", help="CSV name,total; the name 'intercept' means a column of ones")
    c.add_argument("--out", help="output CSV (default stdout)")
    return parser


def _write_report(text_json: str, table: str, out) -> None:
    if out is None:
        sys.stdout.write(text_json)
        sys.stderr.write(table)
        return
    Path(out).write_text(text_json, encoding="utf-8")
    Path(out).with_suffix(".txt").write_text(table, encoding="utf-8")


def cmd_simulate(args) -> int:
    if args.study is not None:
        cfg = preset(args.study)
    else:
        cfg = StudyConfig.from_json(args.config)
    if args.reps is not None:
        cfg.replicates = args.reps
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    threads = args.threads if args.threads is not None else default_threads()
    summary = run_study(cfg, threads=threads)
    _write_report(summary.to_json(), summary.text(), args.out)
    return 0


def cmd_pipeline(args) -> int:
    spec = PipelineSpec.from_json(args.spec)
    if args.reps is not None:
        spec.replicates = args.reps
    if args.seed is not None:
        spec.seed = args.seed
    threads = args.threads if args.threads is not None else default_threads()
    summaries = run_pipeline(spec, threads=threads)
    table = "\n".join(s.text() for s in summaries.values())
    _write_report(pipeline_json(summaries), table, args.out)
    return 0


def _read_numeric(path):
    df = pd.read_csv(path, float_precision="round_trip")
    ids = None
    for name in ID_COLUMNS:
        if name in df.columns:
            ids = df.pop(name).to_numpy()
            break
    return df, ids


def _covariates(df, path):
    try:
        return np.ascontiguousarray(df.to_numpy(dtype=float))
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric covariate: {exc}") from None


def cmd_match(args) -> int:
    tdf, tids = _read_numeric(args.target)
    pdf, pids = _read_numeric(args.pool)
    pi = tdf.pop("pi").to_numpy(dtype=float) if "pi" in tdf.columns else np.ones(len(tdf))
    if list(tdf.columns) != list(pdf.columns):
        raise SchemaError(f"covariate columns differ: {list(tdf.columns)} vs {list(pdf.columns)}")
    standardize = {"auto": None, "yes": True, "no": False}[args.standardize]
    sk = nn_match(_covariates(tdf, args.target), _covariates(pdf, args.pool), with_replacement=args.replace, standardize=standardize)
    tids = np.arange(len(tdf)) if tids is None else tids
    pids = np.arange(len(pdf)) if pids is None else pids
    rows = [
        [tids[i], pids[j], format(d, ".17g"), format(1.0 / pi[i], ".17g"), format(pi[i], ".17g")]
        for i, j, d in zip(sk.p_index, sk.np_index, sk.distance)
    ]
    _write_csv(["p_id", "np_id", "distance", "weight", "pi"], rows, args.out)
    return 0


def cmd_calibrate(args) -> int:
    names, totals = read_targets_csv(args.targets)
    df = pd.read_csv(args.weights, float_precision="round_trip")
    if "weight" not in df.columns:
        raise SchemaError(f"{args.weights}: no 'weight' column")
    cols = []
    for name in names:
        if name == "intercept":
            cols.append(np.ones(len(df)))
        elif name in df.columns:
            cols.append(df[name].to_numpy(dtype=float))
        else:
            raise SchemaError(f"{args.weights}: no column for target {name!r}")
    res = calibrate_weights(df["weight"].to_numpy(dtype=float), np.column_stack(cols), totals)
    if res.n_negative:
        print(f"warning: {res.n_negative} calibrated weights are negative", file=sys.stderr)
    out = df.copy()
    out["weight"] = [format(w, ".17g") for w in res.weights]
    out["g"] = [format(g, ".17g") for g in res.g_factors]
    _write_csv(list(out.columns), out.astype(str).to_numpy().tolist(), args.out)
    return 0


def _write_csv(header, rows, out) -> None:
    fh = sys.stdout if out is None else open(out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out is not None:
            fh.close()


COMMANDS = {"simulate": cmd_simulate, "pipeline": cmd_pipeline, "match": cmd_match, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.config is not None and args.study is not None:
        parser.error("give either a config file or --study, not both")
    try:
        return COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"matchcal {args.command}: {exc}", file=sys.stderr)
        return 2
    except (MatchcalError, OSError, json.JSONDecodeError) as exc:
        print(f"matchcal {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
