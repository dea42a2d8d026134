"""Decoder-only transformer forward pass with a key/value cache.

Blocks are pre-norm: ``h = h + attn(ln1(h))`` then ``h = h + ffn(ln2(h))``.
Only the six per-block projections may be quantized; norms, embeddings,
scores, softmax and the value weighting stay in float64. There is no
positional encoding and the output head is tied to the embedding table.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InvalidArgumentError, ShapeMismatchError
from .formats import FormatId
from .kernels import qmatvec, ternary_matvec
from .quant import QuantizedTensor, TernaryTensor, quantize_activation

LN_EPS = 1e-5
LINEAR_NAMES = ("w_q", "w_k", "w_v", "w_x", "w_i", "w_o")


@dataclass(frozen=True)
class ModelConfig:
    d: int
    h: int
    d_ff: int
    l_max: int
    n_layers: int
    vocab: int

    def __post_init__(self):
        for name in ("d", "h", "d_ff", "l_max", "vocab"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.n_layers < 0:
            raise InvalidArgumentError("n_layers must be non-negative")
        if self.d % self.h:
            raise InvalidArgumentError(f"d={self.d} is not divisible by h={self.h}")

    @property
    def head_dim(self) -> int:
        return self.d // self.h

    def linear_shapes(self) -> dict[str, tuple[int, int]]:
        d, f = self.d, self.d_ff
        return {"w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_x": (d, d),
                "w_i": (f, d), "w_o": (d, f)}


@dataclass
class BlockWeights:
    """One decoder block. Linear weights are float arrays (F32_REF),
    QuantizedTensor or TernaryTensor, stored (out_features, in_features)."""

    w_q: object
    w_k: object
    w_v: object
    w_x: object
    w_i: object
    w_o: object
    b_i: np.ndarray
    b_o: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    def linears(self) -> dict[str, object]:
        return {name: getattr(self, name) for name in LINEAR_NAMES}


@dataclass
class DecoderWeights:
    embedding: np.ndarray  # (vocab, d), also the output head
    blocks: list[BlockWeights]
    out_norm_g: np.ndarray
    out_norm_b: np.ndarray

    @property
    def format_id(self) -> FormatId:
        if not self.blocks:
            return FormatId.F32_REF
        return linear_format(self.blocks[0].w_q)

    def validate(self, config: ModelConfig) -> None:
        """Raise ShapeMismatchError unless every tensor agrees with ``config``."""
        d = config.d

        def expect(name, arr, shape):
            got = tuple(np.shape(arr)) if isinstance(arr, np.ndarray) else tuple(arr.shape)
            if got != shape:
                raise ShapeMismatchError(f"{name}: expected {shape}, got {got}")

        expect("embedding", self.embedding, (config.vocab, d))
        expect("out_norm_g", self.out_norm_g, (d,))
        expect("out_norm_b", self.out_norm_b, (d,))
        if len(self.blocks) != config.n_layers:
            raise ShapeMismatchError(f"{len(self.blocks)} blocks for n_layers={config.n_layers}")
        for i, blk in enumerate(self.blocks):
            for name, shape in config.linear_shapes().items():
                expect(f"blk.{i}.{name}", getattr(blk, name), shape)
            expect(f"blk.{i}.b_i", blk.b_i, (config.d_ff,))
            for name in ("b_o", "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                expect(f"blk.{i}.{name}", getattr(blk, name), (d,))


def linear_format(w) -> FormatId:
    if isinstance(w, QuantizedTensor):
        return w.format_id
    if isinstance(w, TernaryTensor):
        return FormatId.T1_58
    return FormatId.F32_REF


def linear(w, x: np.ndarray) -> np.ndarray:
    """``W @ x`` using the kernel matching how ``w`` is stored."""
    if isinstance(w, QuantizedTensor):
        return qmatvec(w, quantize_activation(x))
    if isinstance(w, TernaryTensor):
        return ternary_matvec(w, quantize_activation(x))
    return np.asarray(w, dtype=np.float64) @ x


def linear_multi(ws, x: np.ndarray) -> list[np.ndarray]:
    """Apply several matrices to one input, quantizing the input once."""
    if any(isinstance(w, (QuantizedTensor, TernaryTensor)) for w in ws):
        qx = quantize_activation(x)
        out = []
        for w in ws:
            if isinstance(w, QuantizedTensor):
                out.append(qmatvec(w, qx))
            elif isinstance(w, TernaryTensor):
                out.append(ternary_matvec(w, qx))
            else:
                out.append(np.asarray(w, dtype=np.float64) @ x)
        return out
    return [np.asarray(w, dtype=np.float64) @ x for w in ws]


class KVCache:
    """Keys and values of every processed position, per block and head."""

    def __init__(self, config: ModelConfig):
        self.config = config
        shape = (config.n_layers, config.h, config.l_max, config.head_dim)
        self.keys = np.zeros(shape)
        self.values = np.zeros(shape)
        self.t = 0

    @property
    def full(self) -> bool:
        return self.t >= self.config.l_max

    def head_keys(self, layer: int, upto: int) -> np.ndarray:
        """(upto, head_dim) per head, i.e. shape (h, upto, head_dim)."""
        return self.keys[layer, :, :upto]

    def head_values(self, layer: int, upto: int) -> np.ndarray:
        return self.values[layer, :, :upto]


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gelu(x):
    """tanh approximation of GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise InvalidArgumentError("layer_norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * np.asarray(gain, dtype=np.float64) + np.asarray(bias, dtype=np.float64)


def attention_forward(hidden, cache: KVCache, layer: int, blk: BlockWeights) -> np.ndarray:
    """Self-attention for one new position; appends its key and value to
    ``cache`` at block ``layer``. The caller advances ``cache.t``."""
    cfg = cache.config
    t = cache.t
    if t >= cfg.l_max:
        raise CapacityError(f"KV cache full at l_max={cfg.l_max}")
    x = np.asarray(hidden, dtype=np.float64)
    q, k, v = linear_multi((blk.w_q, blk.w_k, blk.w_v), x)
    dh = cfg.head_dim
    cache.keys[layer, :, t] = k.reshape(cfg.h, dh)
    cache.values[layer, :, t] = v.reshape(cfg.h, dh)
    keys = cache.head_keys(layer, t + 1)
    vals = cache.head_values(layer, t + 1)
    scores = np.einsum("hd,htd->ht", q.reshape(cfg.h, dh), keys) / math.sqrt(cfg.d)
    probs = softmax(scores)
    heads = np.einsum("ht,htd->hd", probs, vals)
    return linear(blk.w_x, heads.reshape(cfg.d))


def ffn_forward(x, blk: BlockWeights) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    inner = gelu(linear(blk.w_i, x) + blk.b_i)
    return linear(blk.w_o, inner) + blk.b_o


def decode_step(token_id: int, cache: KVCache, weights: DecoderWeights, config: ModelConfig) -> np.ndarray:
    """Run one token through the stack and return the next-token logits."""
    if not 0 <= int(token_id) < config.vocab:
        raise InvalidArgumentError(f"token id {token_id} outside vocabulary of {config.vocab}")
    if cache.full:
        raise CapacityError(f"KV cache full at l_max={config.l_max}")
    hidden = np.asarray(weights.embedding[int(token_id)], dtype=np.float64)
    for i, blk in enumerate(weights.blocks):
        hidden = hidden + attention_forward(layer_norm(hidden, blk.ln1_g, blk.ln1_b), cache, i, blk)
        hidden = hidden + ffn_forward(layer_norm(hidden, blk.ln2_g, blk.ln2_b), blk)
    cache.t += 1
    out = layer_norm(hidden, weights.out_norm_g, weights.out_norm_b)
    return np.asarray(weights.embedding, dtype=np.float64) @ out


@dataclass
class Generation:
    tokens: list[int]
    latencies_ms: list[float] = field(default_factory=list)


def generate(prompt, n_new: int, weights: DecoderWeights, config: ModelConfig) -> Generation:
    """Greedy decoding. ``latencies_ms[i]`` is the wall time of the decode
    step that produced ``tokens[i]``."""
    prompt = [int(t) for t in prompt]
    if n_new < 0:
        raise InvalidArgumentError("n_new must be non-negative")
    if not prompt and n_new:
        raise InvalidArgumentError("generation needs a non-empty prompt")
    if len(prompt) + n_new > config.l_max:
        raise CapacityError(f"prompt {len(prompt)} + {n_new} new tokens exceeds l_max={config.l_max}")
    if n_new == 0:
        return Generation([])
    cache = KVCache(config)
    for tok in prompt[:-1]:
        decode_step(tok, cache, weights, config)
    out = Generation([])
    tok = prompt[-1]
    for _ in range(n_new):
        start = time.perf_counter()
        logits = decode_step(tok, cache, weights, config)
        tok = int(np.argmax(logits))  # first max = lowest id on ties
        out.latencies_ms.append((time.perf_counter() - start) * 1e3)
        out.tokens.append(tok)
    return out
