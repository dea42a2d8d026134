"""Format identifiers and block-layout descriptors."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import InvalidArgumentError


class FormatId(enum.IntEnum):
    F32_REF = 0
    Q8 = 1
    Q6K = 2
    Q4K = 3
    Q2K = 4
    T1_58 = 5

    @classmethod
    def parse(cls, value: "FormatId | int | str") -> "FormatId":
        """Accept an enum member, its integer id, or a case-insensitive name.

        ``"q4k"``, ``"Q4_K"`` and ``"t1.58"`` are all understood.
        """
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            try:
                return cls(value)
            except ValueError:
                raise InvalidArgumentError(f"unknown format id {value}") from None
        key = str(value).upper().replace("_", "").replace(".", "").replace("-", "")
        aliases = {
            "F32": cls.F32_REF, "F32REF": cls.F32_REF, "FP32": cls.F32_REF,
            "Q8": cls.Q8, "Q80": cls.Q8,
            "Q6K": cls.Q6K, "Q6": cls.Q6K,
            "Q4K": cls.Q4K, "Q4": cls.Q4K,
            "Q2K": cls.Q2K, "Q2": cls.Q2K,
            "T158": cls.T1_58, "TERNARY": cls.T1_58, "Q158": cls.T1_58,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidArgumentError(f"unknown format {value!r}") from None

    @property
    def is_kquant(self) -> bool:
        return self in KQUANT_SPECS


@dataclass(frozen=True)
class QuantSpec:
    """Block layout of a k-quant format.

    A super-block holds ``sub_blocks_per_super`` sub-blocks of
    ``sub_block_size`` weights. Each sub-block step is stored as an unsigned
    ``sub_scale_bits`` code multiplied by the half-precision super-block scale.
    ``sub_scale_bits == 0`` means a single sub-block whose step is stored
    directly as the half-precision scale.
    """

    format_id: FormatId
    bits: int
    sub_block_size: int
    sub_blocks_per_super: int
    sub_scale_bits: int
    super_scale_half: bool = True

    @property
    def super_block_size(self) -> int:
        return self.sub_block_size * self.sub_blocks_per_super

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def sub_code_max(self) -> int:
        return (1 << self.sub_scale_bits) - 1

    @property
    def super_block_bytes(self) -> int:
        bits = (
            16
            + self.sub_blocks_per_super * self.sub_scale_bits
            + self.super_block_size * self.bits
        )
        assert bits % 8 == 0
        return bits // 8

    @property
    def bits_per_weight(self) -> float:
        return 8 * self.super_block_bytes / self.super_block_size


KQUANT_SPECS: dict[FormatId, QuantSpec] = {
    FormatId.Q8: QuantSpec(FormatId.Q8, 8, 32, 1, 0),
    FormatId.Q6K: QuantSpec(FormatId.Q6K, 6, 16, 16, 8),
    FormatId.Q4K: QuantSpec(FormatId.Q4K, 4, 32, 8, 6),
    FormatId.Q2K: QuantSpec(FormatId.Q2K, 2, 16, 16, 4),
}

# 5 trits per byte
TERNARY_BITS_PER_WEIGHT = 8 / 5


def quant_spec(format_id) -> QuantSpec:
    fid = FormatId.parse(format_id)
    try:
        return KQUANT_SPECS[fid]
    except KeyError:
        raise InvalidArgumentError(f"{fid.name} is not a k-quant format") from None


def bits_per_weight(format_id) -> float:
    """Analytic storage cost of one weight, scales included (per-tensor
    ternary scale excluded)."""
    fid = FormatId.parse(format_id)
    if fid is FormatId.F32_REF:
        return 32.0
    if fid is FormatId.T1_58:
        return TERNARY_BITS_PER_WEIGHT
    return KQUANT_SPECS[fid].bits_per_weight


def row_multiple(format_id) -> int:
    """Column count every tensor row must be a multiple of."""
    fid = FormatId.parse(format_id)
    if fid.is_kquant:
        return KQUANT_SPECS[fid].super_block_size
    return 1
