"""Per-tensor absmax quantization of activations to signed 8-bit codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import as_vector, round_half_away

ACT_QMAX = 127


@dataclass(frozen=True, eq=False)
class QuantizedActivation:
    values: np.ndarray  # int8
    scale: float  # codes per unit

    def __len__(self) -> int:
        return self.values.shape[0]


def quantize_activation(x) -> QuantizedActivation:
    v = as_vector(x)
    amax = float(np.max(np.abs(v)))
    # a vector too small for a finite scale is stored as zero
    if amax <= ACT_QMAX / np.finfo(np.float64).max:
        return QuantizedActivation(np.zeros(v.shape, dtype=np.int8), 1.0)
    scale = ACT_QMAX / amax
    codes = np.clip(round_half_away(v * scale), -ACT_QMAX, ACT_QMAX).astype(np.int8)
    return QuantizedActivation(codes, scale)


def dequantize_activation(qa: QuantizedActivation) -> np.ndarray:
    return qa.values.astype(np.float64) / qa.scale
