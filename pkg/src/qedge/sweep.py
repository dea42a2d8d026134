"""Desk-scale matrix-vector throughput comparison across storage formats."""

from __future__ import annotations

import statistics
import time

import numpy as np

from .decoder import linear
from .formats import FormatId, bits_per_weight
from .quant import quantize_tensor, quantize_ternary

SWEEP_FORMATS = (FormatId.Q2K, FormatId.Q4K, FormatId.Q8, FormatId.F32_REF)
EXPECTED_ORDER = [f.name for f in SWEEP_FORMATS]


def _store(w: np.ndarray, fid: FormatId):
    if fid is FormatId.F32_REF:
        return w.astype(np.float32)
    if fid is FormatId.T1_58:
        return quantize_ternary(w)
    return quantize_tensor(w, fid)


def matvec_sweep(dim: int = 2048, reps: int = 5, seed: int = 0, formats=SWEEP_FORMATS) -> dict:
    """Time one ``dim x dim`` matvec per format through the inference path
    (activation quantization included). Timings are machine dependent."""
    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.normal(0.0, 0.02, size=(dim, dim))
    x = rng.normal(size=dim)
    rows = []
    for fid in formats:
        fid = FormatId.parse(fid)
        stored = _store(w, fid)
        linear(stored, x)  # warm caches (unpacked codes, masks)
        times = []
        for _ in range(reps):
            start = time.perf_counter()
            linear(stored, x)
            times.append(time.perf_counter() - start)
        median = statistics.median(times)
        rows.append({
            "format": fid.name,
            "bits_per_weight": bits_per_weight(fid),
            "median_s": median,
            "matvecs_per_s": 1.0 / median if median > 0 else float("inf"),
        })
    ranked = sorted(rows, key=lambda r: -r["matvecs_per_s"])
    names = [r["format"] for r in rows]
    expected = [n for n in EXPECTED_ORDER if n in names]
    tput = {r["format"]: r["matvecs_per_s"] for r in rows}
    holds = all(tput[a] >= tput[b] for a, b in zip(expected, expected[1:]))
    return {
        "dim": dim,
        "reps": reps,
        "results": rows,
        "observed_order": [r["format"] for r in ranked],
        "expected_order": expected,
        "expected_order_holds": holds,
    }
