import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qedge import ModelConfig, classify_realtime, derive_metrics, ingest_power_log, measure_inference
from qedge.errors import InvalidArgumentError, MeasurementError, PowerLogError, TableFormatError
from qedge.metrics import (
    RealtimeClass,
    TableRow,
    class_rank,
    default_table_path,
    latency_from_tps,
    load_figures,
    load_table,
    reproduce_table,
    round_to_display,
    write_power_log,
)
from qedge.model_io import synthesize_f32


def test_llama1b_q2_row():
    r = derive_metrics(67.68, static_w=6.16 - 2.85, total_w=6.16)
    assert round(r.tps, 2) == 14.78
    assert round(r.tpj, 2) == 5.18
    assert abs(r.wbl / 2.88e4 - 1) < 0.005
    assert r.realtime_class is RealtimeClass.REAL_TIME


def test_bitnet_row():
    r = derive_metrics(52.00, static_w=7.43 - 4.12, total_w=7.43)
    assert round(r.tps, 2) == 19.23
    assert round(r.tpj, 2) == 4.67  # quoted 4.66, within 0.2%
    assert abs(r.tpj / 4.66 - 1) < 0.01
    assert abs(r.wbl / 3.11e4 - 1) < 0.005


def test_gemma_fp_row():
    r = derive_metrics(512.03, static_w=6.97 - 3.65, total_w=6.97)
    assert round(r.tps, 2) == 1.95
    assert abs(r.tpj / 0.53 - 1) < 0.01


def test_invariants():
    r = derive_metrics(100.0, static_w=3.0, total_w=5.0, label="x")
    assert r.dynamic_w == 2.0 and r.tps == 10.0 and r.tpj == 5.0
    assert r.wbl == 10.0 / 5.0 * 18000 / 1.5
    r = derive_metrics(100.0, 3.0, 5.0, battery_j=3600, tokens_per_word=1.0)
    assert r.wbl == 2.0 * 3600


def test_partial_report_without_power():
    r = derive_metrics(250.0)
    assert r.tps == 4.0 and r.tpj is None and r.wbl is None and r.dynamic_w is None


def test_errors():
    with pytest.raises(MeasurementError):
        derive_metrics(10.0, static_w=5.0, total_w=4.0)
    with pytest.raises(InvalidArgumentError):
        derive_metrics(0.0, 1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        derive_metrics(-3.0)
    with pytest.raises(InvalidArgumentError):
        derive_metrics(3.0, static_w=1.0)


@given(st.floats(1e-3, 1e7, allow_nan=False))
def test_latency_identity(latency):
    r = derive_metrics(latency)
    assert r.latency_ms_per_token == latency
    # 1000/(1000/L) can differ from L by rounding; never by more than one ulp
    assert abs(latency_from_tps(r.tps) - latency) <= math.ulp(latency)


@pytest.mark.parametrize("tps, cls", [
    (14.78, RealtimeClass.REAL_TIME),
    (3.0, RealtimeClass.REAL_TIME),
    (2.99, RealtimeClass.NEAR_REAL_TIME),
    (2.0, RealtimeClass.NEAR_REAL_TIME),
    (1.99, RealtimeClass.DEGRADED),
    (1.5, RealtimeClass.DEGRADED),
    (1.49, RealtimeClass.UNSUITABLE),
    (0.03, RealtimeClass.UNSUITABLE),
    (0.0, RealtimeClass.UNSUITABLE),
])
def test_classify(tps, cls):
    assert classify_realtime(tps) is cls


def test_classify_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        classify_realtime(-1.0)


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_classification_monotone(a, b):
    lo, hi = sorted((a, b))
    assert class_rank(classify_realtime(lo)) <= class_rank(classify_realtime(hi))


# --- power logs ------------------------------------------------------------------

def test_power_log_mean(tmp_path):
    p = tmp_path / "load.csv"
    write_power_log(p, [0, 1, 2], [6.45, 6.45, 6.45])
    trace = ingest_power_log(p)
    assert trace.mean_power == pytest.approx(6.45)
    assert trace.duration_s == 2.0


def test_dynamic_from_logs(power_logs):
    idle, load = (ingest_power_log(p, label) for p, label in zip(power_logs, ("idle", "load")))
    assert idle.mean_power == pytest.approx(3.32)
    r = derive_metrics(262.81, idle.mean_power, load.mean_power)
    assert r.dynamic_w == pytest.approx(3.13)
    assert round(r.tpj, 2) == 1.22


@pytest.mark.parametrize("content, fragment", [
    ("", "empty"),
    ("timestamp_s,power_w\n", "no samples"),
    ("time,watts\n0,1\n", ":1:"),
    ("timestamp_s,power_w\n0,1\n1,abc\n", ":3:"),
    ("timestamp_s,power_w\n0,1\n0,1\n", ":3: timestamp"),
    ("timestamp_s,power_w\n0,1\n1,2,3\n", ":3:"),
    ("timestamp_s,power_w\n0,-1\n", "negative"),
])
def test_power_log_errors(tmp_path, content, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(PowerLogError, match=fragment):
        ingest_power_log(p)


# --- measurement -----------------------------------------------------------------

def test_measure_inference():
    cfg = ModelConfig(d=16, h=2, d_ff=16, l_max=32, n_layers=1, vocab=16)
    w = synthesize_f32(cfg, 0)
    with pytest.raises(InvalidArgumentError):
        measure_inference(w, cfg, [1, 2], 1)
    m = measure_inference(w, cfg, [1, 2], 5, runs=3)
    assert len(m.samples_ms) == 3 and all(len(s) == 5 for s in m.samples_ms)
    assert m.mean_ms == pytest.approx(np.mean([x for s in m.samples_ms for x in s[1:]]))
    assert m.run_means == [pytest.approx(np.mean(s[1:])) for s in m.samples_ms]
    assert m.cv >= 0
    assert m.tokens[0] == m.tokens[1] == m.tokens[2]


# --- table -----------------------------------------------------------------------

def test_shipped_table():
    rows = load_table(default_table_path())
    assert len(rows) == 27
    result = reproduce_table(rows)
    assert result.passed
    assert all(r.report is not None for r in result.rows)


def test_display_rounding():
    assert round_to_display(12361.4, "1.2e4") == round_to_display(12000, "1.2e4")
    assert str(round_to_display(0.11500001, "0.12")) == "0.12"
    assert str(round_to_display(14.7754, "14.78")) == "14.78"


def test_flagged_row():
    rows = [TableRow("bad", 100.0, dynamic_w=7.0, total_w=6.0), TableRow("ok", 100.0, 1.0, 2.0)]
    result = reproduce_table(rows, figures=[])
    assert not result.passed
    assert result.rows[0].report is None and "negative" in result.rows[0].error
    assert result.rows[1].report is not None


def test_missing_label_fails_check():
    rows = [TableRow("Llama1B_Q2", 67.68, 2.85, 6.16)]
    figs = [f for f in load_figures() if f.label == "Gemma2_Q2"]
    assert not reproduce_table(rows, figs).passed


def test_table_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("")
    with pytest.raises(TableFormatError):
        load_table(p)
    p.write_text("label,latency_ms,dynamic_w,total_w\n")
    with pytest.raises(TableFormatError):
        load_table(p)
    p.write_text("label,latency_ms,dynamic_w,total_w\nx,1,2\n")
    with pytest.raises(TableFormatError):
        load_table(p)
