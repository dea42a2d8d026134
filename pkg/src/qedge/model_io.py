"""``.qedg`` model container: save, load and seeded synthetic models.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"QEDG"
    4       4     u32 format version (1)
    8       24    u32 d, h, d_ff, l_max, n_layers, vocab
    32      4     u32 model format id (format of the block linears)
    36      4     u32 tensor count
    40      8     u64 payload offset (multiple of 32)
    48      8     u64 payload length (payload runs to end of file)
    56      4     u32 CRC-32 of the payload
    60      4     u32 directory length in bytes
    64      ...   directory, one entry per tensor:
                    u16 name length, UTF-8 name, u8 format id, u8 ndim,
                    u32 dims[ndim], u64 absolute offset, u64 byte length
    ...           zero padding up to the payload offset
    payload       tensors, each starting on a 32-byte boundary, zero padded

Tensor encodings: F32_REF is raw ``<f4`` row-major; k-quant formats are
their super-block stream (see ``QuantizedTensor.to_bytes``); T1_58 is a
``<f4`` scale followed by trits packed five per byte.

Synthetic weights come from ``numpy.random.Generator(PCG64(seed))``: one
``normal(0, 0.02)`` draw per tensor, float64, cast to float32, in this
order: embedding, then per block w_q, w_k, w_v, w_x, w_i, w_o, b_i, b_o.
Layer-norm gains are 1 and biases 0.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .decoder import LINEAR_NAMES, BlockWeights, DecoderWeights, ModelConfig
from .errors import (
    BadMagicError,
    ContainerError,
    InvalidArgumentError,
    IntegrityError,
    InvalidDataError,
    LayoutError,
    ShapeMismatchError,
    TruncationError,
    UnsupportedFormatError,
    UnsupportedVersionError,
)
from .formats import KQUANT_SPECS, FormatId, bits_per_weight, row_multiple
from .quant import QuantizedTensor, TernaryTensor, quantize_tensor, quantize_ternary

MAGIC = b"QEDG"
VERSION = 1
ALIGN = 32
INIT_STD = 0.02
_HEADER = struct.Struct("<4sI6III QQII".replace(" ", ""))
assert _HEADER.size == 64

_BLOCK_VECTORS = ("b_i", "b_o", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


def _pad(n: int) -> int:
    return (-n) % ALIGN


def tensor_names(config: ModelConfig) -> list[str]:
    names = ["token_embd", "out_norm.g", "out_norm.b"]
    for i in range(config.n_layers):
        names += [f"blk.{i}.{n}" for n in LINEAR_NAMES + _BLOCK_VECTORS]
    return names


def _named_tensors(weights: DecoderWeights) -> list[tuple[str, object]]:
    items = [
        ("token_embd", weights.embedding),
        ("out_norm.g", weights.out_norm_g),
        ("out_norm.b", weights.out_norm_b),
    ]
    for i, blk in enumerate(weights.blocks):
        for name in LINEAR_NAMES + _BLOCK_VECTORS:
            items.append((f"blk.{i}.{name}", getattr(blk, name)))
    return items


def _encode(t) -> tuple[FormatId, tuple[int, ...], bytes]:
    if isinstance(t, QuantizedTensor):
        return t.format_id, t.shape, t.to_bytes()
    if isinstance(t, TernaryTensor):
        return FormatId.T1_58, t.shape, t.to_bytes()
    arr = np.ascontiguousarray(t, dtype="<f4")
    return FormatId.F32_REF, arr.shape, arr.tobytes()


def _decode(fid: FormatId, shape: tuple[int, ...], data: bytes):
    if fid is FormatId.F32_REF:
        n = int(np.prod(shape))
        if len(data) != 4 * n:
            raise ContainerError(f"F32 tensor {shape} needs {4 * n} bytes, got {len(data)}")
        return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
    if len(shape) != 2:
        raise ContainerError(f"{fid.name} tensors must be 2-D, got shape {shape}")
    if fid is FormatId.T1_58:
        return TernaryTensor.from_bytes(shape, data)
    return QuantizedTensor.from_bytes(KQUANT_SPECS[fid], shape, data)


def model_to_bytes(weights: DecoderWeights, config: ModelConfig) -> bytes:
    weights.validate(config)
    items = [(name, *_encode(t)) for name, t in _named_tensors(weights)]

    directory = bytearray()
    entry_fixed = []
    for name, fid, shape, blob in items:
        raw = name.encode("utf-8")
        directory += struct.pack("<H", len(raw)) + raw + struct.pack("<BB", int(fid), len(shape))
        directory += struct.pack(f"<{len(shape)}I", *shape)
        entry_fixed.append(len(directory))
        directory += b"\0" * 16  # offset and length, filled below
    payload_offset = _HEADER.size + len(directory)
    payload_offset += _pad(payload_offset)

    payload = bytearray()
    for (name, fid, shape, blob), slot in zip(items, entry_fixed):
        payload += b"\0" * _pad(len(payload))
        struct.pack_into("<QQ", directory, slot, payload_offset + len(payload), len(blob))
        payload += blob
    payload += b"\0" * _pad(len(payload))

    header = _HEADER.pack(
        MAGIC, VERSION,
        config.d, config.h, config.d_ff, config.l_max, config.n_layers, config.vocab,
        int(weights.format_id), len(items),
        payload_offset, len(payload), zlib.crc32(payload), len(directory),
    )
    out = header + bytes(directory)
    out += b"\0" * (payload_offset - len(out))
    return out + bytes(payload)


def save_model(weights: DecoderWeights, config: ModelConfig, path) -> None:
    data = model_to_bytes(weights, config)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def model_from_bytes(data: bytes) -> tuple[DecoderWeights, ModelConfig]:
    if len(data) < _HEADER.size:
        raise TruncationError(f"file is {len(data)} bytes, header needs {_HEADER.size}")
    (magic, version, d, h, d_ff, l_max, n_layers, vocab, model_fid, n_tensors,
     payload_offset, payload_len, crc, dir_len) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} (supported: {VERSION})")
    if payload_offset + payload_len > len(data) or _HEADER.size + dir_len > len(data):
        raise TruncationError(
            f"payload ends at {payload_offset + payload_len} but file has {len(data)} bytes"
        )
    if payload_offset % ALIGN or _HEADER.size + dir_len > payload_offset:
        raise ContainerError("malformed header offsets")
    try:
        model_fid = FormatId(model_fid)
    except ValueError:
        raise UnsupportedFormatError(f"unknown model format id {model_fid}") from None
    try:
        config = ModelConfig(d, h, d_ff, l_max, n_layers, vocab)
    except InvalidArgumentError as exc:
        raise ContainerError(f"invalid model config: {exc}") from None

    entries = _read_directory(data, dir_len, n_tensors)
    payload = data[payload_offset:payload_offset + payload_len]
    if zlib.crc32(payload) != crc:
        raise IntegrityError("payload checksum mismatch")

    spans = sorted((off, off + length, name) for name, _, _, off, length in entries)
    end = payload_offset
    for lo, hi, name in spans:
        if lo < end or hi > payload_offset + payload_len:
            raise ContainerError(f"tensor {name} overlaps another tensor or leaves the payload")
        if lo % ALIGN:
            raise ContainerError(f"tensor {name} is not {ALIGN}-byte aligned")
        end = hi

    expected = tensor_names(config)
    names = [e[0] for e in entries]
    if sorted(names) != sorted(expected) or len(set(names)) != len(names):
        raise ContainerError("tensor directory does not match the model config")
    tensors = {}
    for name, fid, shape, off, length in entries:
        try:
            tensors[name] = _decode(fid, shape, data[off:off + length])
        except (InvalidDataError, LayoutError) as exc:
            raise ContainerError(f"tensor {name}: {exc}") from None

    blocks = []
    for i in range(n_layers):
        blocks.append(BlockWeights(**{n: tensors[f"blk.{i}.{n}"] for n in LINEAR_NAMES + _BLOCK_VECTORS}))
    weights = DecoderWeights(
        embedding=tensors["token_embd"],
        blocks=blocks,
        out_norm_g=tensors["out_norm.g"],
        out_norm_b=tensors["out_norm.b"],
    )
    try:
        weights.validate(config)
    except ShapeMismatchError as exc:
        raise ContainerError(str(exc)) from None
    return weights, config


def _read_directory(data: bytes, dir_len: int, n_tensors: int):
    pos = _HEADER.size
    end = pos + dir_len
    entries = []
    try:
        for _ in range(n_tensors):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            fid, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            off, length = struct.unpack_from("<QQ", data, pos)
            pos += 16
            try:
                fid = FormatId(fid)
            except ValueError:
                raise UnsupportedFormatError(f"tensor {name}: unknown format id {fid}") from None
            entries.append((name, fid, tuple(shape), off, length))
    except (struct.error, UnicodeDecodeError) as exc:
        raise ContainerError(f"malformed tensor directory: {exc}") from None
    if pos != end:
        raise ContainerError("tensor directory length mismatch")
    return entries


def load_model(path) -> tuple[DecoderWeights, ModelConfig]:
    return model_from_bytes(Path(path).read_bytes())


def check_dims(config: ModelConfig, format_id) -> None:
    fid = FormatId.parse(format_id)
    m = row_multiple(fid)
    for name, value in (("d", config.d), ("d_ff", config.d_ff)):
        if value % m:
            raise LayoutError(f"{fid.name} needs {name} to be a multiple of {m}, got {value}")


def synthesize_f32(config: ModelConfig, seed: int) -> DecoderWeights:
    rng = np.random.Generator(np.random.PCG64(seed))

    def draw(*shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)

    d = config.d
    embedding = draw(config.vocab, d)
    blocks = []
    for _ in range(config.n_layers):
        lin = {name: draw(*shape) for name, shape in config.linear_shapes().items()}
        blocks.append(BlockWeights(
            **lin,
            b_i=draw(config.d_ff), b_o=draw(d),
            ln1_g=np.ones(d, np.float32), ln1_b=np.zeros(d, np.float32),
            ln2_g=np.ones(d, np.float32), ln2_b=np.zeros(d, np.float32),
        ))
    return DecoderWeights(embedding, blocks, np.ones(d, np.float32), np.zeros(d, np.float32))


def quantize_weights(weights: DecoderWeights, format_id, ternary_mode: str = "absmean") -> DecoderWeights:
    """Return a copy whose block linears are stored in ``format_id``."""
    fid = FormatId.parse(format_id)

    def convert(w):
        if fid is FormatId.F32_REF:
            return np.asarray(w, dtype=np.float32)
        if fid is FormatId.T1_58:
            return quantize_ternary(w, ternary_mode)
        return quantize_tensor(w, fid)

    blocks = []
    for blk in weights.blocks:
        for name in LINEAR_NAMES:
            if not isinstance(getattr(blk, name), np.ndarray):
                raise InvalidArgumentError(f"{name} is already quantized")
        fields = {n: getattr(blk, n) for n in _BLOCK_VECTORS}
        fields.update({n: convert(getattr(blk, n)) for n in LINEAR_NAMES})
        blocks.append(BlockWeights(**fields))
    return DecoderWeights(weights.embedding, blocks, weights.out_norm_g, weights.out_norm_b)


def gen_synthetic_model(config: ModelConfig, seed: int, format_id="f32") -> DecoderWeights:
    """Deterministic N(0, 0.02) model from ``seed``, linears stored in ``format_id``."""
    check_dims(config, format_id)
    return quantize_weights(synthesize_f32(config, seed), format_id)


def analytic_size(config: ModelConfig, format_id) -> float:
    """Bytes the container needs at the format's nominal bits per weight,
    ignoring header, directory and alignment padding."""
    fid = FormatId.parse(format_id)
    d, f = config.d, config.d_ff
    linear_weights = config.n_layers * (4 * d * d + 2 * d * f)
    fp_values = config.vocab * d + 2 * d + config.n_layers * (f + 5 * d)
    size = linear_weights * bits_per_weight(fid) / 8 + 4 * fp_values
    if fid is FormatId.T1_58:
        size += 4 * 6 * config.n_layers
    return size


def linear_bits_per_weight(weights: DecoderWeights) -> float:
    """Measured storage of the block linears in bits per weight."""
    bits = 0
    count = 0
    for blk in weights.blocks:
        for w in blk.linears().values():
            _, shape, blob = _encode(w)
            bits += 8 * len(blob)
            count += int(np.prod(shape))
    return bits / count if count else float("nan")
