"""qedge: quantized LLM inference and energy metrics at desk scale."""

__version__ = "0.1.0"

from .decoder import (
    BlockWeights,
    DecoderWeights,
    KVCache,
    ModelConfig,
    attention_forward,
    decode_step,
    ffn_forward,
    generate,
    layer_norm,
)
from .estimators import ActivationQuantizer, KQuantizer, TernaryQuantizer
from .formats import FormatId, QuantSpec, bits_per_weight, quant_spec
from .kernels import qmatvec, ref_matvec, ternary_matvec
from .metrics import (
    BenchReport,
    RealtimeClass,
    classify_realtime,
    derive_metrics,
    ingest_power_log,
    measure_inference,
)
from .model_io import gen_synthetic_model, load_model, save_model
from .quant import (
    QuantizedActivation,
    QuantizedTensor,
    TernaryTensor,
    block_scale,
    dequantize_activation,
    dequantize_tensor,
    dequantize_ternary,
    quantize_activation,
    quantize_tensor,
    quantize_ternary,
)
