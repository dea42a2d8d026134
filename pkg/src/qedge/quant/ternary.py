"""Ternary {-1, 0, +1} weights with a single per-tensor scale."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .._validation import as_matrix, round_half_away
from ..errors import InvalidArgumentError, InvalidDataError
from ..formats import FormatId
from ..packing import pack_trits, packed_trit_bytes, unpack_trits

TERNARY_MODES = ("absmean", "absmax")


@dataclass(frozen=True)
class SignIndex:
    """Compressed-row column lists: row ``r`` owns
    ``cols[starts[r]:starts[r + 1]]``."""

    cols: np.ndarray
    starts: np.ndarray

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SignIndex":
        rows, cols = np.nonzero(mask)
        counts = np.bincount(rows, minlength=mask.shape[0])
        starts = np.concatenate([[0], np.cumsum(counts)])
        return cls(cols.astype(np.intp), starts.astype(np.intp))

    def rows(self, lo: int, hi: int) -> "SignIndex":
        a, b = self.starts[lo], self.starts[hi]
        return SignIndex(self.cols[a:b], self.starts[lo:hi + 1] - a)


@dataclass(frozen=True, eq=False)
class TernaryTensor:
    shape: tuple[int, int]
    packed: bytes
    gamma: float

    format_id = FormatId.T1_58

    @cached_property
    def trits(self) -> np.ndarray:
        """Unpacked int8 trits, shape ``self.shape``."""
        rows, cols = self.shape
        return unpack_trits(self.packed, rows * cols).reshape(rows, cols)

    @cached_property
    def sign_index(self) -> tuple[SignIndex, SignIndex]:
        """Column indices of the +1 and of the -1 trits, row by row."""
        t = self.trits
        return SignIndex.from_mask(t == 1), SignIndex.from_mask(t == -1)

    @property
    def nbytes(self) -> int:
        return 4 + len(self.packed)

    def to_bytes(self) -> bytes:
        """``[f32 gamma][trits, 5 per byte]``."""
        return struct.pack("<f", self.gamma) + self.packed

    @classmethod
    def from_bytes(cls, shape: tuple[int, int], data: bytes) -> "TernaryTensor":
        rows, cols = shape
        need = 4 + packed_trit_bytes(rows * cols)
        if len(data) != need:
            raise InvalidDataError(f"ternary tensor {shape} needs {need} bytes, got {len(data)}")
        (gamma,) = struct.unpack_from("<f", data)
        if not np.isfinite(gamma) or gamma <= 0:
            raise InvalidDataError(f"ternary scale must be positive, got {gamma}")
        tt = cls(shape=(rows, cols), packed=bytes(data[4:]), gamma=gamma)
        tt.trits  # validates the trit bytes eagerly
        return tt


def quantize_ternary(weights, mode: str = "absmean") -> TernaryTensor:
    """Round ``weights / gamma`` to {-1, 0, +1}.

    ``gamma`` is the mean absolute weight (``absmean``) or the largest one
    (``absmax``). An all-zero matrix gets ``gamma = 1``.
    """
    if mode not in TERNARY_MODES:
        raise InvalidArgumentError(f"mode must be one of {TERNARY_MODES}, got {mode!r}")
    w = as_matrix(weights)
    a = np.abs(w)
    with np.errstate(over="ignore"):
        gamma = float(np.float32(a.mean() if mode == "absmean" else a.max()))
    if not np.isfinite(gamma):
        raise InvalidDataError("weights too large for a single-precision scale")
    if gamma == 0.0:
        gamma = 1.0
    trits = np.clip(round_half_away(w / gamma), -1, 1).astype(np.int8)
    return TernaryTensor(shape=w.shape, packed=pack_trits(trits), gamma=gamma)


def dequantize_ternary(tt: TernaryTensor) -> np.ndarray:
    return tt.gamma * tt.trits.astype(np.float64)
