"""``qedge`` command line: generate, quantize, benchmark and reproduce.

Exit codes: 0 success, 1 reproduction diff failure, 2 usage or input
error, 3 runtime measurement error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .decoder import ModelConfig
from .errors import ContainerError, InvalidArgumentError, LayoutError, MeasurementError, QedgeError
from .formats import FormatId
from .metrics import (
    derive_metrics,
    default_table_path,
    ingest_power_log,
    load_figures,
    load_table,
    measure_inference,
    reproduce_table,
)
from .model_io import gen_synthetic_model, linear_bits_per_weight, load_model, quantize_weights, save_model
from .sweep import matvec_sweep

EXIT_OK, EXIT_DIFF, EXIT_USAGE, EXIT_MEASURE = 0, 1, 2, 3

# report fields whose values depend on wall-clock timing
TIMING_FIELDS = [
    "measurement.run_means_ms",
    "measurement.pooled_mean_ms",
    "measurement.cv",
    "metrics.latency_ms_per_token",
    "metrics.tps",
    "metrics.tpj",
    "metrics.wbl",
    "metrics.realtime_class",
    "matvec_sweep",
]


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(config: ModelConfig | None) -> str | None:
    if config is None:
        return None
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def run_manifest(args, config: ModelConfig | None = None, model_path=None) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return {
        "subcommand": args.command,
        "config_hash": _config_hash(config),
        "model_path": str(model_path) if model_path else None,
        "model_sha256": _sha256(model_path) if model_path else None,
        "seed": getattr(args, "seed", None),
        "flags": flags,
        "toolkit_version": __version__,
        "host": {
            "platform": platform.platform(),
            "machine": platform.machine(),
            "python": platform.python_version(),
            "cpu_count": os.cpu_count(),
            "qedge_threads": os.environ.get("QEDGE_THREADS"),
        },
    }


def _load(path) -> tuple:
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    try:
        return load_model(path)
    except ContainerError as exc:
        raise UsageError(f"cannot load {path}: {type(exc).__name__}: {exc}") from None


def cmd_generate_model(args) -> int:
    try:
        config = ModelConfig(args.d, args.h, args.dff, args.ctx, args.layers, args.vocab)
        weights = gen_synthetic_model(config, args.seed, args.format)
    except (InvalidArgumentError, LayoutError) as exc:
        raise UsageError(str(exc)) from None
    save_model(weights, config, args.out)
    print(f"wrote {args.out}  format={weights.format_id.name}  sha256={_sha256(args.out)}")
    if config.n_layers:
        print(f"bits/weight: {linear_bits_per_weight(weights):.4f}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    weights, config = _load(args.input)
    if weights.format_id is not FormatId.F32_REF:
        raise UsageError(f"input is already {weights.format_id.name}; quantize needs an F32_REF container")
    try:
        fid = FormatId.parse(args.format)
        q = quantize_weights(weights, fid, args.ternary_mode)
    except (InvalidArgumentError, LayoutError) as exc:
        raise UsageError(str(exc)) from None
    save_model(q, config, args.out)
    print(f"wrote {args.out}  format={fid.name}")
    print(f"bits/weight: {linear_bits_per_weight(q):.4f}")
    return EXIT_OK


def _prompt(config: ModelConfig, length: int, seed: int) -> list[int]:
    rng = np.random.Generator(np.random.PCG64(seed))
    return [int(t) for t in rng.integers(0, config.vocab, size=length)]


def cmd_bench(args) -> int:
    weights, config = _load(args.model)
    if (args.power_idle is None) != (args.power_load is None):
        raise UsageError("--power-idle and --power-load must be given together")
    for p in (args.power_idle, args.power_load):
        if p is not None and not Path(p).is_file():
            raise UsageError(f"power log not found: {p}")
    if args.prompt_len < 1:
        raise UsageError("--prompt-len must be >= 1")
    if args.prompt_len + args.gen_len > config.l_max:
        raise UsageError(f"prompt-len + gen-len exceeds the model context ({config.l_max})")

    idle = load = None
    try:
        if args.power_idle is not None:
            idle = ingest_power_log(args.power_idle, "idle")
            load = ingest_power_log(args.power_load, "load")
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    measurement = None
    try:
        if args.latency_ms is not None:
            latency = args.latency_ms
        else:
            measurement = measure_inference(weights, config, _prompt(config, args.prompt_len, args.seed),
                                            args.gen_len, args.runs)
            latency = measurement.mean_ms
        report = derive_metrics(
            latency,
            idle.mean_power if idle else None,
            load.mean_power if load else None,
            label=f"{Path(args.model).stem}_{weights.format_id.name}",
        )
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None

    doc = {
        "manifest": run_manifest(args, config, args.model),
        "model": {"format": weights.format_id.name, "config": asdict(config)},
        "measurement": {
            "source": "given" if measurement is None else "measured",
            "prompt_len": args.prompt_len,
            "gen_len": args.gen_len,
            "runs": args.runs if measurement else 0,
            "run_means_ms": measurement.run_means if measurement else [],
            "pooled_mean_ms": latency,
            "cv": measurement.cv if measurement else None,
        },
        "power": None if idle is None else {
            "idle_mean_w": idle.mean_power,
            "load_mean_w": load.mean_power,
            "idle_samples": int(idle.power_w.size),
            "load_samples": int(load.power_w.size),
        },
        "metrics": report.to_dict(),
        "matvec_sweep": matvec_sweep(args.sweep_dim, args.sweep_reps, args.seed) if args.sweep_dim else None,
        "timing_fields": TIMING_FIELDS,
    }
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".csv":
        _write_report_csv(out, doc)
    else:
        out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    series = Path(args.series) if args.series else out.with_name("series.csv")
    with open(series, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "token_index", "latency_ms", "warmup"])
        if measurement is not None:
            for r, run in enumerate(measurement.samples_ms):
                for i, ms in enumerate(run):
                    w.writerow([r, i, f"{ms:.6f}", int(i == 0)])
    _print_report(doc)
    return EXIT_OK


def _write_report_csv(path: Path, doc: dict) -> None:
    row = {"label": doc["metrics"]["label"], "format": doc["model"]["format"]}
    row.update({k: doc["metrics"][k] for k in doc["metrics"] if k != "label"})
    row["cv"] = doc["measurement"]["cv"]
    row["config_hash"] = doc["manifest"]["config_hash"]
    row["model_sha256"] = doc["manifest"]["model_sha256"]
    row["toolkit_version"] = doc["manifest"]["toolkit_version"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _fmt(v, spec=".4g"):
    return "n/a" if v is None else format(v, spec)


def _print_report(doc: dict) -> None:
    m = doc["metrics"]
    print(f"{m['label']}: latency {m['latency_ms_per_token']:.3f} ms/token  TPS {m['tps']:.3f}  "
          f"TPJ {_fmt(m['tpj'])}  W/BL {_fmt(m['wbl'])}  [{m['realtime_class']}]")
    for i, mean in enumerate(doc["measurement"]["run_means_ms"]):
        print(f"  run {i}: {mean:.3f} ms/token")
    sweep = doc.get("matvec_sweep")
    if sweep:
        for r in sweep["results"]:
            print(f"  matvec {sweep['dim']}x{sweep['dim']} {r['format']:>7}: {r['matvecs_per_s']:.1f}/s")
        print(f"  order {' >= '.join(sweep['expected_order'])}: "
              f"{'holds' if sweep['expected_order_holds'] else 'does not hold'} on this machine")


def cmd_reproduce_table(args) -> int:
    path = Path(args.table) if args.table else default_table_path()
    if not path.is_file():
        raise UsageError(f"table not found: {path}")
    try:
        rows = load_table(path)
        figures = load_figures(args.figures)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    result = reproduce_table(rows, figures)

    print(f"{'label':<14}{'TPS':>10}{'TPJ':>8}{'W/BL':>11}  class")
    for r in result.rows:
        if r.report is None:
            print(f"{r.row.label:<14}  FLAGGED: {r.error}")
        else:
            rep = r.report
            print(f"{rep.label:<14}{rep.tps:>10.2f}{rep.tpj:>8.2f}{rep.wbl:>11.4g}  {rep.realtime_class.value}")
    for c in result.checks:
        derived = "missing" if c.derived is None else f"{c.derived:.4g}"
        rel = "" if c.rel_error is None else f" rel {c.rel_error:.2%}"
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: derived {derived}{rel}")

    if args.out:
        doc = {
            "manifest": run_manifest(args),
            "table": str(path),
            "rows": [
                {
                    "label": r.row.label,
                    "latency_ms": r.row.latency_ms,
                    "dynamic_w": r.row.dynamic_w,
                    "total_w": r.row.total_w,
                    "derived": None if r.report is None else r.report.to_dict(),
                    "error": r.error,
                }
                for r in result.rows
            ],
            "checks": [
                {
                    "name": c.name,
                    "metric": c.figure.metric,
                    "label": c.figure.label,
                    "baseline": c.figure.baseline or None,
                    "op": c.figure.op,
                    "expected": c.figure.expected,
                    "derived": c.derived,
                    "rel_error": c.rel_error,
                    "display_match": c.display_match,
                    "passed": c.passed,
                }
                for c in result.checks
            ],
            "passed": result.passed,
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if result.passed else EXIT_DIFF


def cmd_sweep(args) -> int:
    sweep = matvec_sweep(args.dim, args.reps, args.seed)
    doc = {"manifest": run_manifest(args), "matvec_sweep": sweep, "timing_fields": ["matvec_sweep"]}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for r in sweep["results"]:
        print(f"{r['format']:>7}: {r['matvecs_per_s']:.1f} matvec/s  ({r['bits_per_weight']:.4g} bits/weight)")
    print(f"order {' >= '.join(sweep['expected_order'])}: "
          f"{'holds' if sweep['expected_order_holds'] else 'does not hold'} on this machine")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qedge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qedge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-model", help="write a seeded synthetic model container")
    g.add_argument("--d", type=int, default=256)
    g.add_argument("--h", type=int, default=8)
    g.add_argument("--dff", type=int, default=1024)
    g.add_argument("--layers", type=int, default=4)
    g.add_argument("--vocab", type=int, default=512)
    g.add_argument("--ctx", type=int, default=256)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--format", default="q4k")
    g.add_argument("--out", default="model.qedg")
    g.set_defaults(func=cmd_generate_model)

    q = sub.add_parser("quantize", help="requantize an F32_REF container")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--format", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--ternary-mode", choices=("absmean", "absmax"), default="absmean")
    q.set_defaults(func=cmd_quantize)

    b = sub.add_parser("bench", help="measure per-token latency and derive energy metrics")
    b.add_argument("--model", required=True)
    b.add_argument("--prompt-len", type=int, default=16)
    b.add_argument("--gen-len", type=int, default=32)
    b.add_argument("--runs", type=int, default=1)
    b.add_argument("--seed", type=int, default=0, help="seed of the prompt token sequence")
    b.add_argument("--power-idle", help="idle power log CSV (static power)")
    b.add_argument("--power-load", help="load power log CSV (total power)")
    b.add_argument("--latency-ms", type=float, help="use a recorded latency instead of measuring")
    b.add_argument("--report", default="report.json", help="report path; .json or .csv")
    b.add_argument("--series", help="per-token latency CSV (default: series.csv next to the report)")
    b.add_argument("--sweep-dim", type=int, default=0, help="also run a DIM x DIM matvec format sweep")
    b.add_argument("--sweep-reps", type=int, default=5)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("reproduce-table", help="derive TPS/TPJ/W-BL for a latency/power table")
    r.add_argument("--table", help="CSV label,latency_ms,dynamic_w,total_w (default: shipped table)")
    r.add_argument("--figures", help="reference figures CSV (default: shipped)")
    r.add_argument("--out", help="write a JSON report here")
    r.set_defaults(func=cmd_reproduce_table)

    s = sub.add_parser("sweep", help="matvec throughput per storage format")
    s.add_argument("--dim", type=int, default=2048)
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qedge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeasurementError, OverflowError) as exc:
        print(f"qedge {args.command}: measurement error: {exc}", file=sys.stderr)
        return EXIT_MEASURE
    except QedgeError as exc:
        print(f"qedge {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
