"""Throughput and energy metrics for on-device LLM inference.

* TPS  = 1000 / per-token latency in ms
* TPJ  = TPS / dynamic power, dynamic = total - static (idle) power
* W/BL = TPS / total power * battery joules / tokens per word
"""

from __future__ import annotations

import csv
import enum
import math
import statistics
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path

import numpy as np

from .decoder import DecoderWeights, ModelConfig, generate
from .errors import InvalidArgumentError, MeasurementError, PowerLogError, TableFormatError

BATTERY_J = 18_000.0  # 5 Wh
TOKENS_PER_WORD = 1.5
REALTIME_TPS = 3.0
NEAR_REALTIME_TPS = 2.0
DEGRADED_TPS = 1.5
RELATIVE_TOLERANCE = 0.01


class RealtimeClass(str, enum.Enum):
    REAL_TIME = "RealTime"
    NEAR_REAL_TIME = "NearRealTime"
    DEGRADED = "Degraded"
    UNSUITABLE = "Unsuitable"


_CLASS_RANK = {c: i for i, c in enumerate(
    [RealtimeClass.UNSUITABLE, RealtimeClass.DEGRADED, RealtimeClass.NEAR_REAL_TIME, RealtimeClass.REAL_TIME]
)}


def classify_realtime(tps: float) -> RealtimeClass:
    if tps < 0 or math.isnan(tps):
        raise InvalidArgumentError(f"tps must be non-negative, got {tps}")
    if tps >= REALTIME_TPS:
        return RealtimeClass.REAL_TIME
    if tps >= NEAR_REALTIME_TPS:
        return RealtimeClass.NEAR_REAL_TIME
    if tps >= DEGRADED_TPS:
        return RealtimeClass.DEGRADED
    return RealtimeClass.UNSUITABLE


def class_rank(c: RealtimeClass) -> int:
    return _CLASS_RANK[RealtimeClass(c)]


@dataclass(frozen=True)
class BenchReport:
    label: str
    latency_ms_per_token: float
    tps: float
    static_w: float | None
    total_w: float | None
    dynamic_w: float | None
    tpj: float | None
    wbl: float | None
    realtime_class: RealtimeClass

    def to_dict(self) -> dict:
        d = asdict(self)
        d["realtime_class"] = self.realtime_class.value
        return d


def derive_metrics(
    latency_ms: float,
    static_w: float | None = None,
    total_w: float | None = None,
    battery_j: float = BATTERY_J,
    tokens_per_word: float = TOKENS_PER_WORD,
    label: str = "",
) -> BenchReport:
    """Build a :class:`BenchReport` from latency and idle/load power.

    Power fields (and TPJ, W/BL) are ``None`` when no power is given.

    >>> r = derive_metrics(67.68, static_w=6.16 - 2.85, total_w=6.16)
    >>> round(r.tps, 2), round(r.tpj, 2), round(r.wbl, -2)
    (14.78, 5.18, 28800.0)
    """
    if not (latency_ms > 0 and math.isfinite(latency_ms)):
        raise InvalidArgumentError(f"latency must be positive and finite, got {latency_ms}")
    tps = 1000.0 / latency_ms
    dynamic = tpj = wbl = None
    if (static_w is None) != (total_w is None):
        raise InvalidArgumentError("static_w and total_w must be given together")
    if static_w is not None:
        if not (math.isfinite(static_w) and math.isfinite(total_w)):
            raise MeasurementError("power readings must be finite")
        if static_w < 0:
            raise MeasurementError(f"static power {static_w} W is negative")
        if total_w < static_w:
            raise MeasurementError(f"total power {total_w} W is below static power {static_w} W")
        dynamic = total_w - static_w
        tpj = tps / dynamic if dynamic > 0 else math.inf
        wbl = tps / total_w * battery_j / tokens_per_word if total_w > 0 else math.inf
    return BenchReport(label, float(latency_ms), tps, static_w, total_w, dynamic, tpj, wbl,
                       classify_realtime(tps))


def latency_from_tps(tps: float) -> float:
    return 1000.0 / tps


@dataclass(frozen=True)
class PowerTrace:
    timestamps: np.ndarray
    power_w: np.ndarray
    label: str = "load"

    @property
    def mean_power(self) -> float:
        """Arithmetic mean of the samples (the meter samples at a fixed rate)."""
        return float(np.mean(self.power_w))

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


POWER_LOG_HEADER = ["timestamp_s", "power_w"]


def ingest_power_log(path, label: str = "load") -> PowerTrace:
    """Parse a ``timestamp_s,power_w`` CSV.

    Raises PowerLogError naming the offending line for bad headers,
    malformed rows, negative power and non-increasing timestamps.
    """
    if label not in ("idle", "load"):
        raise InvalidArgumentError(f"label must be 'idle' or 'load', got {label!r}")
    ts, pw = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PowerLogError(f"{path}: empty file")
        if [h.strip() for h in header] != POWER_LOG_HEADER:
            raise PowerLogError(f"{path}:1: expected header {','.join(POWER_LOG_HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise PowerLogError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError:
                raise PowerLogError(f"{path}:{line}: non-numeric field in {row}") from None
            if not (math.isfinite(t) and math.isfinite(p)):
                raise PowerLogError(f"{path}:{line}: non-finite value")
            if p < 0:
                raise PowerLogError(f"{path}:{line}: negative power {p}")
            if ts and t <= ts[-1]:
                raise PowerLogError(f"{path}:{line}: timestamp {t} does not increase")
            ts.append(t)
            pw.append(p)
    if not ts:
        raise PowerLogError(f"{path}: no samples")
    return PowerTrace(np.array(ts), np.array(pw), label)


def write_power_log(path, timestamps, power_w) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POWER_LOG_HEADER)
        for t, p in zip(timestamps, power_w):
            w.writerow([repr(float(t)), repr(float(p))])


@dataclass(frozen=True)
class LatencyMeasurement:
    """Per-token latencies of one or more generation runs.

    The first token of every run is a warm-up sample and is excluded from
    ``run_means`` and ``mean_ms``.
    """

    samples_ms: list[list[float]]
    run_means: list[float]
    mean_ms: float
    cv: float
    tokens: list[list[int]] = field(default_factory=list)


def measure_inference(weights: DecoderWeights, config: ModelConfig, prompt, n_tokens: int,
                      runs: int = 1) -> LatencyMeasurement:
    if n_tokens < 2:
        raise InvalidArgumentError("n_tokens must be >= 2: the first token is warm-up")
    if runs < 1:
        raise InvalidArgumentError("runs must be >= 1")
    samples, means, tokens = [], [], []
    for _ in range(runs):
        gen = generate(prompt, n_tokens, weights, config)
        samples.append(gen.latencies_ms)
        means.append(statistics.fmean(gen.latencies_ms[1:]))
        tokens.append(gen.tokens)
    pooled = statistics.fmean(x for run in samples for x in run[1:])
    mu = statistics.fmean(means)
    cv = statistics.pstdev(means) / mu if mu > 0 else 0.0
    return LatencyMeasurement(samples, means, pooled, cv, tokens)


@dataclass(frozen=True)
class TableRow:
    label: str
    latency_ms: float
    dynamic_w: float
    total_w: float


TABLE_HEADER = ["label", "latency_ms", "dynamic_w", "total_w"]


def default_table_path() -> Path:
    return Path(str(resources.files("qedge") / "data" / "performance_table.csv"))


def default_figures_path() -> Path:
    return Path(str(resources.files("qedge") / "data" / "reference_figures.csv"))


def load_table(path) -> list[TableRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TableFormatError(f"{path}: empty file")
        if [h.strip() for h in header] != TABLE_HEADER:
            raise TableFormatError(f"{path}:1: expected header {','.join(TABLE_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise TableFormatError(f"{path}:{reader.line_num}: expected 4 fields")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise TableFormatError(f"{path}:{reader.line_num}: non-numeric field") from None
            rows.append(TableRow(row[0].strip(), *vals))
    if not rows:
        raise TableFormatError(f"{path}: no rows")
    return rows


@dataclass(frozen=True)
class ReferenceFigure:
    metric: str  # tps | tpj | wbl
    label: str
    baseline: str  # empty: direct value; otherwise ratio label / baseline
    op: str  # "=" or ">"
    expected: str  # kept as text: its digits set the display precision


def load_figures(path=None) -> list[ReferenceFigure]:
    path = default_figures_path() if path is None else path
    with open(path, newline="", encoding="utf-8") as fh:
        return [ReferenceFigure(r["metric"], r["label"], r["baseline"], r["op"], r["expected"])
                for r in csv.DictReader(fh)]


def round_to_display(value: float, shown: str) -> Decimal:
    """Round ``value`` half-up to the last digit written in ``shown``
    (e.g. ``"2.9e4"`` -> thousands, ``"14.78"`` -> hundredths)."""
    quantum = Decimal(1).scaleb(Decimal(shown).as_tuple().exponent)
    return Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class FigureCheck:
    figure: ReferenceFigure
    derived: float | None
    rel_error: float | None
    display_match: bool
    passed: bool

    @property
    def name(self) -> str:
        f = self.figure
        subject = f"{f.label}/{f.baseline}" if f.baseline else f.label
        return f"{f.metric} {subject} {f.op} {f.expected}"


def check_figure(fig: ReferenceFigure, reports: dict[str, BenchReport],
                 tolerance: float = RELATIVE_TOLERANCE) -> FigureCheck:
    """Compare a derived metric (or ratio) with a quoted figure.

    ``=`` passes when the relative error is within ``tolerance`` or the
    derived value, rounded to the digits the figure shows, equals it.
    ``>`` passes on strict inequality.
    """
    try:
        value = getattr(reports[fig.label], fig.metric)
        if fig.baseline:
            value = value / getattr(reports[fig.baseline], fig.metric)
    except (KeyError, TypeError, ZeroDivisionError):
        return FigureCheck(fig, None, None, False, False)
    expected = float(fig.expected)
    rel = abs(value - expected) / abs(expected)
    if fig.op == ">":
        return FigureCheck(fig, value, rel, False, value > expected)
    shown = round_to_display(value, fig.expected) == Decimal(fig.expected)
    return FigureCheck(fig, value, rel, shown, rel <= tolerance or shown)


@dataclass
class RowResult:
    row: TableRow
    report: BenchReport | None
    error: str | None = None


@dataclass
class TableReproduction:
    rows: list[RowResult]
    checks: list[FigureCheck]

    @property
    def passed(self) -> bool:
        return all(r.report is not None for r in self.rows) and all(c.passed for c in self.checks)

    def reports(self) -> dict[str, BenchReport]:
        return {r.row.label: r.report for r in self.rows if r.report is not None}


def reproduce_table(rows: list[TableRow], figures: list[ReferenceFigure] | None = None) -> TableReproduction:
    """Derive metrics for every table row (static = total - dynamic) and
    check them against the reference figures."""
    figures = load_figures() if figures is None else figures
    results = []
    for row in rows:
        try:
            rep = derive_metrics(row.latency_ms, row.total_w - row.dynamic_w, row.total_w, label=row.label)
            results.append(RowResult(row, rep))
        except (MeasurementError, InvalidArgumentError) as exc:
            results.append(RowResult(row, None, str(exc)))
    reports = {r.row.label: r.report for r in results if r.report is not None}
    return TableReproduction(results, [check_figure(f, reports) for f in figures])
