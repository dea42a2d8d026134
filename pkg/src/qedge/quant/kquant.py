"""Block-wise symmetric k-quantization with two-level (super/sub) scales.

Each sub-block is scaled absmax-style so its largest magnitude maps to the
top code ``2**(b-1) - 1``. The resulting per-sub-block step sizes are then
themselves quantized: the super-block keeps one half-precision scale and
each sub-block keeps a small unsigned multiplier of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .._validation import as_matrix, as_vector, round_half_away
from ..errors import InvalidArgumentError, InvalidDataError, LayoutError
from ..formats import FormatId, QuantSpec, quant_spec
from ..packing import (
    from_twos_complement,
    pack_bits,
    to_twos_complement,
    unpack_bits,
)

_VALID_BITS = (2, 4, 6, 8)


def block_scale(block, bits: int) -> float:
    """Absmax scale for one block: ``(2**(bits-1) - 1) / max|w|``, or 0 for
    an all-zero block."""
    if bits not in _VALID_BITS:
        raise InvalidArgumentError(f"bit width must be one of {_VALID_BITS}, got {bits}")
    w = as_vector(block, "block")
    alpha = float(np.max(np.abs(w)))
    if alpha == 0.0:
        return 0.0
    return ((1 << (bits - 1)) - 1) / alpha


@dataclass(frozen=True)
class SuperBlock:
    super_scale: float
    sub_scale_codes: np.ndarray
    weight_codes: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        return self.sub_scale_codes.astype(np.float64) * self.super_scale


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Quantized weight matrix.

    Codes are held unpacked for the kernels; :meth:`to_bytes` produces the
    bit-packed super-block stream used on disk.

    Attributes:
        spec: block layout.
        shape: (rows, cols) of the original matrix.
        codes: int8 weight codes, shape (rows, cols).
        sub_codes: uint8 sub-scale codes, shape (rows, supers_per_row,
            sub_blocks_per_super).
        super_scales: float16 scales, shape (rows, supers_per_row).
    """

    spec: QuantSpec
    shape: tuple[int, int]
    codes: np.ndarray
    sub_codes: np.ndarray
    super_scales: np.ndarray

    @property
    def format_id(self) -> FormatId:
        return self.spec.format_id

    @cached_property
    def block_codes(self) -> np.ndarray:
        """Codes as float32 laid out (sub-blocks per row, rows, sub_block_size).

        float32 is exact here: every partial dot product with 8-bit
        activations stays below 2**24.
        """
        rows, cols = self.shape
        sb = self.spec.sub_block_size
        return np.ascontiguousarray(
            self.codes.reshape(rows, cols // sb, sb).transpose(1, 0, 2), dtype=np.float32
        )

    @property
    def n_super_blocks(self) -> int:
        return self.super_scales.size

    @cached_property
    def steps(self) -> np.ndarray:
        """Dequantized sub-block steps, shape (rows, sub-blocks per row)."""
        rows = self.shape[0]
        steps = self.sub_codes.astype(np.float64) * self.super_scales.astype(np.float64)[..., None]
        return steps.reshape(rows, -1)

    def super_block(self, index: int) -> SuperBlock:
        """Return the ``index``-th super-block in row-major order."""
        rows, per_row = self.super_scales.shape
        r, k = divmod(index, per_row)
        if not 0 <= r < rows:
            raise IndexError(index)
        width = self.spec.super_block_size
        return SuperBlock(
            super_scale=float(self.super_scales[r, k]),
            sub_scale_codes=self.sub_codes[r, k].copy(),
            weight_codes=self.codes[r, k * width:(k + 1) * width].copy(),
        )

    @property
    def super_blocks(self) -> list[SuperBlock]:
        return [self.super_block(i) for i in range(self.n_super_blocks)]

    @property
    def nbytes(self) -> int:
        return self.n_super_blocks * self.spec.super_block_bytes

    def to_bytes(self) -> bytes:
        """Serialize as consecutive super-blocks, each laid out as
        ``[f16 super scale][sub-scale codes][weight codes]`` with the codes
        packed LSB-first (weight codes in two's complement)."""
        spec = self.spec
        n = self.n_super_blocks
        parts = [self.super_scales.astype("<f2").reshape(n).view(np.uint8).reshape(n, 2)]
        if spec.sub_scale_bits:
            parts.append(pack_bits(self.sub_codes.reshape(n, -1), spec.sub_scale_bits))
        raw = to_twos_complement(self.codes.reshape(n, spec.super_block_size), spec.bits)
        parts.append(pack_bits(raw, spec.bits))
        return np.concatenate(parts, axis=1).tobytes()

    @classmethod
    def from_bytes(cls, spec: QuantSpec, shape: tuple[int, int], data: bytes) -> "QuantizedTensor":
        rows, cols = shape
        _check_layout(cols, spec)
        per_row = cols // spec.super_block_size
        n = rows * per_row
        if len(data) != n * spec.super_block_bytes:
            raise InvalidDataError(
                f"{spec.format_id.name} tensor {shape} needs {n * spec.super_block_bytes} bytes, "
                f"got {len(data)}"
            )
        buf = np.frombuffer(data, dtype=np.uint8).reshape(n, spec.super_block_bytes)
        supers = buf[:, :2].copy().view("<f2").reshape(rows, per_row).astype(np.float16)
        pos = 2
        if spec.sub_scale_bits:
            nsub = spec.sub_blocks_per_super * spec.sub_scale_bits // 8
            subs = unpack_bits(buf[:, pos:pos + nsub], spec.sub_scale_bits, spec.sub_blocks_per_super)
            pos += nsub
        else:
            subs = np.ones((n, 1), dtype=np.uint32)
        raw = unpack_bits(buf[:, pos:], spec.bits, spec.super_block_size)
        codes = from_twos_complement(raw, spec.bits)
        if np.any(codes < -spec.qmax):
            raise InvalidDataError("weight code -2**(b-1) is not a legal code")
        if not np.all(np.isfinite(supers)) or np.any(supers < 0):
            raise InvalidDataError("super-block scale must be finite and non-negative")
        return cls(
            spec=spec,
            shape=(rows, cols),
            codes=codes.astype(np.int8).reshape(rows, cols),
            sub_codes=subs.astype(np.uint8).reshape(rows, per_row, spec.sub_blocks_per_super),
            super_scales=supers,
        )


def _check_layout(cols: int, spec: QuantSpec) -> None:
    if cols % spec.super_block_size:
        raise LayoutError(
            f"{spec.format_id.name} needs row length to be a multiple of "
            f"{spec.super_block_size}, got {cols}"
        )


def _resolve_spec(spec) -> QuantSpec:
    if isinstance(spec, QuantSpec):
        return spec
    return quant_spec(spec)


def fit_scales(weights: np.ndarray, spec: QuantSpec):
    """Compute per-sub-block scales for a validated float64 matrix.

    Returns ``(sub_scales, sub_codes, super_scales)`` where ``sub_scales`` is
    the unquantized absmax scale of every sub-block, shape
    (rows, supers_per_row, sub_blocks_per_super).
    """
    rows, cols = weights.shape
    per_row = cols // spec.super_block_size
    blocks = weights.reshape(rows, per_row, spec.sub_blocks_per_super, spec.sub_block_size)
    alpha = np.abs(blocks).max(axis=-1)
    # blocks whose scale would overflow float64 (absmax < ~1e-307) count as zero
    nonzero = alpha > spec.qmax / np.finfo(np.float64).max
    with np.errstate(divide="ignore"):
        sub_scales = np.where(nonzero, spec.qmax / np.where(nonzero, alpha, 1.0), 0.0)
        steps = np.where(nonzero, 1.0 / np.where(nonzero, sub_scales, 1.0), 0.0)

    if spec.sub_scale_bits == 0:
        with np.errstate(over="ignore"):
            supers = steps[..., 0].astype(np.float16)
        sub_codes = np.ones_like(steps, dtype=np.uint8)
    else:
        with np.errstate(over="ignore"):
            supers = (steps.max(axis=-1) / spec.sub_code_max).astype(np.float16)
        s16 = supers.astype(np.float64)[..., None]
        safe = np.where(s16 > 0, s16, 1.0)
        sub_codes = np.where(
            s16 > 0, np.clip(round_half_away(steps / safe), 0, spec.sub_code_max), 0
        ).astype(np.uint8)
    if not np.all(np.isfinite(supers)):
        raise InvalidDataError("weights too large for a half-precision super-block scale")
    return sub_scales, sub_codes, supers


def encode(weights: np.ndarray, sub_scales: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Weight codes ``clamp(round(w * s_sub))`` as int8, shape of ``weights``."""
    rows, cols = weights.shape
    blocks = weights.reshape(sub_scales.shape + (spec.sub_block_size,))
    codes = np.clip(round_half_away(blocks * sub_scales[..., None]), -spec.qmax, spec.qmax)
    return codes.astype(np.int8).reshape(rows, cols)


def quantize_tensor(weights, spec) -> QuantizedTensor:
    """Quantize a matrix row-wise into super-blocks of ``spec``.

    >>> import numpy as np
    >>> qt = quantize_tensor(np.ones((1, 256)), "q8")
    >>> int(qt.codes.min()), int(qt.codes.max())
    (127, 127)
    """
    spec = _resolve_spec(spec)
    w = as_matrix(weights)
    _check_layout(w.shape[1], spec)
    sub_scales, sub_codes, supers = fit_scales(w, spec)
    return QuantizedTensor(
        spec=spec,
        shape=w.shape,
        codes=encode(w, sub_scales, spec),
        sub_codes=sub_codes,
        super_scales=supers,
    )


def dequantize_tensor(qt: QuantizedTensor) -> np.ndarray:
    rows, cols = qt.shape
    codes = qt.codes.reshape(rows, -1, qt.spec.sub_block_size).astype(np.float64)
    return (codes * qt.steps[..., None]).reshape(rows, cols)
