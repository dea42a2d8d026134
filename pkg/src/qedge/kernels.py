"""Matrix-vector kernels over quantized weights and 8-bit activations.

Every kernel reduces each output row in a fixed order (sub-block index
order), so results are bit-reproducible under any row-parallel schedule.
The worker count defaults to the ``QEDGE_THREADS`` environment variable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector, check_matvec_shapes
from .errors import InvalidArgumentError
from .quant.activation import QuantizedActivation
from .quant.kquant import QuantizedTensor
from .quant.ternary import SignIndex, TernaryTensor

INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class AccumulatorVector:
    """Integer accumulators, one per output row, and the real factor that
    turns them into outputs."""

    values: np.ndarray
    combined_scale: float

    def to_real(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64) * self.combined_scale


def default_workers() -> int:
    raw = os.environ.get("QEDGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidArgumentError(f"QEDGE_THREADS must be an integer, got {raw!r}") from None


def _by_rows(fn, rows: int, workers: int | None) -> np.ndarray:
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, rows)
    if workers <= 1:
        return fn(0, rows)
    edges = np.linspace(0, rows, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, edges[:-1], edges[1:]))
    return np.concatenate(parts)


def ref_matvec(weights, x) -> np.ndarray:
    """Float64 reference product, accumulated column by column (left to right)."""
    w = as_matrix(weights, "W")
    v = as_vector(x)
    check_matvec_shapes(w.shape, v.shape[0])
    acc = np.zeros(w.shape[0])
    for j in range(w.shape[1]):
        acc = acc + w[:, j] * v[j]
    return acc


def block_dots(qw: QuantizedTensor, act_codes: np.ndarray, rows: slice = slice(None)) -> np.ndarray:
    """Integer dot product of every sub-block with the matching activation
    codes; returns int32 of shape (rows, sub-blocks per row)."""
    sb = qw.spec.sub_block_size
    a = np.asarray(act_codes, dtype=np.float32).reshape(-1, sb, 1)
    dots = np.matmul(qw.block_codes[:, rows, :], a)[..., 0]
    return dots.T.astype(np.int32)


def qmatvec(qw: QuantizedTensor, qx: QuantizedActivation, workers: int | None = None) -> np.ndarray:
    """Product of a k-quant matrix with an 8-bit activation vector.

    Each sub-block dot product is exact in integers; it is scaled by
    ``step / s_a`` and added to the row total in sub-block order.
    """
    if isinstance(qw, TernaryTensor):
        raise InvalidArgumentError("ternary weights need ternary_matvec")
    if not isinstance(qw, QuantizedTensor):
        raise InvalidArgumentError(f"expected QuantizedTensor, got {type(qw).__name__}")
    check_matvec_shapes(qw.shape, len(qx))
    combined = qw.steps / qx.scale

    def run(lo, hi):
        dots = block_dots(qw, qx.values, slice(lo, hi)).astype(np.float64)
        scale = combined[lo:hi]
        out = np.zeros(hi - lo)
        for k in range(dots.shape[1]):
            out = out + dots[:, k] * scale[:, k]
        return out

    return _by_rows(run, qw.shape[0], workers)


def segment_sums(codes: np.ndarray, index: SignIndex) -> np.ndarray:
    """Sum of ``codes[cols]`` over every row segment of ``index``, using
    gathers and additions only."""
    n_rows = index.starts.size - 1
    if index.cols.size == 0:
        return np.zeros(n_rows, dtype=codes.dtype)
    gathered = np.concatenate([codes[index.cols], np.zeros(1, dtype=codes.dtype)])
    sums = np.add.reduceat(gathered, index.starts[:-1])
    sums[index.starts[:-1] == index.starts[1:]] = 0  # reduceat leaves empty rows non-zero
    return sums


def ternary_accumulate(pos: SignIndex, neg: SignIndex, codes: np.ndarray) -> np.ndarray:
    """Per row: sum of activations under +1 trits minus sum under -1 trits.

    Works on int arrays and on object arrays of :class:`CountingInt`,
    which is how the absence of multiplications is audited.
    """
    return segment_sums(codes, pos) - segment_sums(codes, neg)


def ternary_accumulators(tw: TernaryTensor, qx: QuantizedActivation, workers: int | None = None) -> AccumulatorVector:
    check_matvec_shapes(tw.shape, len(qx))
    pos, neg = tw.sign_index
    codes = qx.values.astype(np.int64)

    def run(lo, hi):
        return ternary_accumulate(pos.rows(lo, hi), neg.rows(lo, hi), codes)

    acc = _by_rows(run, tw.shape[0], workers)
    if acc.size and np.max(np.abs(acc)) > INT32_MAX:
        raise OverflowError("ternary accumulator exceeds int32")
    return AccumulatorVector(acc.astype(np.int32), tw.gamma / qx.scale)


def ternary_matvec(tw: TernaryTensor, qx: QuantizedActivation, workers: int | None = None) -> np.ndarray:
    """Multiply-free product of ternary weights with 8-bit activations."""
    if not isinstance(tw, TernaryTensor):
        raise InvalidArgumentError(f"expected TernaryTensor, got {type(tw).__name__}")
    return ternary_accumulators(tw, qx, workers).to_real()


class OpCounter:
    def __init__(self):
        self.adds = 0
        self.muls = 0


class CountingInt:
    """Integer that records additions and multiplications on a shared
    :class:`OpCounter`; used to audit kernels on object arrays."""

    __slots__ = ("value", "counter")

    def __init__(self, value: int, counter: OpCounter):
        self.value = int(value)
        self.counter = counter

    def _wrap(self, value):
        return CountingInt(value, self.counter)

    @staticmethod
    def _raw(other):
        return other.value if isinstance(other, CountingInt) else int(other)

    def __add__(self, other):
        self.counter.adds += 1
        return self._wrap(self.value + self._raw(other))

    __radd__ = __add__

    def __sub__(self, other):
        self.counter.adds += 1
        return self._wrap(self.value - self._raw(other))

    def __rsub__(self, other):
        self.counter.adds += 1
        return self._wrap(self._raw(other) - self.value)

    def __neg__(self):
        return self._wrap(-self.value)

    def __mul__(self, other):
        self.counter.muls += 1
        return self._wrap(self.value * self._raw(other))

    __rmul__ = __mul__

    def __int__(self):
        return self.value

    def __eq__(self, other):
        return self.value == self._raw(other)

    def __hash__(self):
        return hash(self.value)

    def __repr__(self):
        return f"CountingInt({self.value})"


def counting_array(codes, counter: OpCounter) -> np.ndarray:
    out = np.empty(len(codes), dtype=object)
    for i, c in enumerate(codes):
        out[i] = CountingInt(int(c), counter)
    return out
