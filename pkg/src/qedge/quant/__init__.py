"""Quantization codecs: k-quant blocks, ternary weights, 8-bit activations."""

from .activation import QuantizedActivation, dequantize_activation, quantize_activation
from .kquant import (
    QuantizedTensor,
    SuperBlock,
    block_scale,
    dequantize_tensor,
    quantize_tensor,
)
from .ternary import TernaryTensor, dequantize_ternary, quantize_ternary

__all__ = [
    "QuantizedActivation",
    "QuantizedTensor",
    "SuperBlock",
    "TernaryTensor",
    "block_scale",
    "dequantize_activation",
    "dequantize_tensor",
    "dequantize_ternary",
    "quantize_activation",
    "quantize_tensor",
    "quantize_ternary",
]
