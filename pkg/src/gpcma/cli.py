"""Command-line interface: run experiments, summarize traces, compare runs."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .benchmark import GenerationRecord, RunTrace, run_experiment, summarize
from .config import ConfigError, parse_config

CSV_COLUMNS = ("run_id", "seed", "generation", "true_evals", "hw_batches",
               "best_f", "sigma", "event")

log = logging.getLogger("gpcma")


def _configure_logging() -> None:
    level = os.environ.get("GPCMA_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def write_trace_csv(trace: RunTrace, path: Path) -> None:
    """One row per generation; floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in trace.records:
            writer.writerow([
                trace.run_id,
                trace.seed,
                rec.generation,
                rec.true_evals,
                rec.hw_batches,
                repr(rec.best_fitness),
                repr(rec.sigma),
                ";".join(rec.events),
            ])


def read_trace_csv(path: Path) -> RunTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return RunTrace(run_id=path.stem, seed=-1)
    trace = RunTrace(run_id=rows[0]["run_id"], seed=int(rows[0]["seed"]))
    for row in rows:
        trace.records.append(GenerationRecord(
            generation=int(row["generation"]),
            true_evals=int(row["true_evals"]),
            hw_batches=int(row["hw_batches"]),
            best_fitness=float(row["best_f"]),
            sigma=float(row["sigma"]),
            events=tuple(row["event"].split(";")) if row["event"] else (),
        ))
    return trace


def _trace_jsonl_lines(trace: RunTrace) -> list[str]:
    lines = []
    for rec in trace.records:
        lines.append(json.dumps({
            "run_id": trace.run_id,
            "seed": trace.seed,
            "generation": rec.generation,
            "true_evals": rec.true_evals,
            "hw_batches": rec.hw_batches,
            "best_f": rec.best_fitness,
            "sigma": rec.sigma,
            "events": list(rec.events),
        }, sort_keys=True))
    lines.append(json.dumps({
        "run_id": trace.run_id,
        "seed": trace.seed,
        "terminal": trace.terminal,
    }, sort_keys=True))
    return lines


def _run_one(config_text: str, seed: int) -> RunTrace:
    return run_experiment(parse_config(config_text), seed)


def _cmd_run(args) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        print("usage: gpcma run --config PATH --out DIR [--seed N] [--jobs N]",
              file=sys.stderr)
        return 2
    text = config_path.read_text()
    try:
        config = parse_config(text)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    seeds = [args.seed] if args.seed is not None else list(config.execution.seeds)
    jobs = args.jobs if args.jobs is not None else config.execution.jobs
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    log.info("running %d seed(s) with %d job(s)", len(seeds), jobs)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_run_one, [text] * len(seeds), seeds))
    else:
        traces = [_run_one(text, seed) for seed in seeds]

    # Output writing stays serialized in the parent process.
    jsonl_lines: list[str] = []
    for trace in sorted(traces, key=lambda t: t.seed):
        write_trace_csv(trace, out_dir / f"trace_s{trace.seed}.csv")
        jsonl_lines.extend(_trace_jsonl_lines(trace))
    (out_dir / "traces.jsonl").write_text("\n".join(jsonl_lines) + "\n")
    (out_dir / "config.json").write_text(config.to_json() + "\n")

    summary = summarize(traces)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _load_dir(path: Path) -> list[RunTrace]:
    traces = [read_trace_csv(p) for p in sorted(path.glob("trace_s*.csv"))]
    if not traces:
        raise FileNotFoundError(f"no trace_s*.csv files in {path}")
    return traces


def _cmd_summarize(args) -> int:
    in_dir = Path(args.in_dir)
    try:
        traces = _load_dir(in_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = summarize(traces)
    out = json.dumps(summary, indent=2, sort_keys=True)
    Path(args.out).write_text(out + "\n")
    print(out)
    return 0


def _cmd_compare(args) -> int:
    try:
        traces_a = {t.seed: t for t in _load_dir(Path(args.a))}
        traces_b = {t.seed: t for t in _load_dir(Path(args.b))}
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    shared = sorted(set(traces_a) & set(traces_b))
    if not shared:
        print("error: no common seeds to compare", file=sys.stderr)
        return 2
    print(f"{'seed':>6} {'best_a':>14} {'best_b':>14} {'diff(a-b)':>14}")
    diffs = []
    for seed in shared:
        best_a = traces_a[seed].best_fitness
        best_b = traces_b[seed].best_fitness
        diffs.append(best_a - best_b)
        print(f"{seed:>6} {best_a:>14.6g} {best_b:>14.6g} {best_a - best_b:>14.6g}")
    diffs.sort()
    n = len(diffs)
    median = diffs[n // 2] if n % 2 else 0.5 * (diffs[n // 2 - 1] + diffs[n // 2])
    wins = sum(1 for d in diffs if d < 0)
    print(f"median diff {median:.6g}; a better on {wins}/{n} seeds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcma",
        description="CMA-ES with GP surrogate evolution control: benchmark runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config and write traces")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.add_argument("--out", required=True, help="output directory for traces")
    p_run.add_argument("--seed", type=int, default=None, help="run a single seed")
    p_run.add_argument("--jobs", type=int, default=None, help="parallel replicate runs")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="aggregate traces from a directory")
    p_sum.add_argument("--in", dest="in_dir", required=True, help="directory of trace CSVs")
    p_sum.add_argument("--out", required=True, help="summary JSON output path")
    p_sum.set_defaults(func=_cmd_summarize)

    p_cmp = sub.add_parser("compare", help="paired comparison of two trace directories")
    p_cmp.add_argument("--a", required=True, help="first trace directory")
    p_cmp.add_argument("--b", required=True, help="second trace directory")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
