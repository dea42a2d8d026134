"""Little-endian bit packing for fixed-width integer codes and trits."""

from __future__ import annotations

import numpy as np

from .errors import InvalidDataError

_TRITS_PER_BYTE = 5
_POW3 = np.array([1, 3, 9, 27, 81], dtype=np.uint16)
# byte value -> its 5 trits (as 0/1/2 digits), values >= 243 are invalid
_TRIT_TABLE = (np.arange(243)[:, None] // _POW3[None, :].astype(np.int64)) % 3


def pack_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Pack rows of unsigned integers, ``width`` bits each, LSB first.

    ``values`` has shape (n, k); the result has shape (n, k*width/8) and
    k*width must be a multiple of 8.
    """
    values = np.asarray(values, dtype=np.uint64)
    n, k = values.shape
    if (k * width) % 8:
        raise ValueError("row bit length must be a whole number of bytes")
    shifts = np.arange(width, dtype=np.uint64)
    bits = ((values[:, :, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(n, k * width), axis=1, bitorder="little")


def unpack_bits(packed: np.ndarray, width: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns uint32 values of shape (n, count)."""
    packed = np.asarray(packed, dtype=np.uint8)
    n = packed.shape[0]
    bits = np.unpackbits(packed, axis=1, bitorder="little")[:, : count * width]
    bits = bits.reshape(n, count, width).astype(np.uint32)
    weights = (np.uint32(1) << np.arange(width, dtype=np.uint32))
    return (bits * weights).sum(axis=2, dtype=np.uint32)


def to_twos_complement(codes: np.ndarray, width: int) -> np.ndarray:
    return np.asarray(codes, dtype=np.int64) & ((1 << width) - 1)


def from_twos_complement(raw: np.ndarray, width: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.int64)
    return np.where(raw >= (1 << (width - 1)), raw - (1 << width), raw)


def pack_trits(trits: np.ndarray) -> bytes:
    """Pack values in {-1, 0, +1} five per byte as base-3 digits (least
    significant first). The tail is padded with zero trits."""
    flat = np.asarray(trits, dtype=np.int64).ravel() + 1
    pad = (-flat.size) % _TRITS_PER_BYTE
    if pad:
        flat = np.concatenate([flat, np.ones(pad, dtype=np.int64)])
    digits = flat.reshape(-1, _TRITS_PER_BYTE)
    return (digits @ _POW3.astype(np.int64)).astype(np.uint8).tobytes()


def unpack_trits(data: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    if raw.size != packed_trit_bytes(count):
        raise InvalidDataError(f"expected {packed_trit_bytes(count)} trit bytes, got {raw.size}")
    if np.any(raw >= 243):
        raise InvalidDataError("trit byte out of range (>= 243)")
    return (_TRIT_TABLE[raw].ravel()[:count] - 1).astype(np.int8)


def packed_trit_bytes(count: int) -> int:
    return -(-count // _TRITS_PER_BYTE)
