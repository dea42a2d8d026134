"""Independent reference computations used by the tests.

These are deliberately written as plain loops or direct formulas, without
calling into the code paths they check.
"""

import math

import numpy as np


def naive_matvec(W, x):
    out = []
    for row in np.asarray(W, dtype=np.float64).tolist():
        s = 0.0
        for w, v in zip(row, np.asarray(x, dtype=np.float64).tolist()):
            s += w * v
        out.append(s)
    return np.array(out)


def mixed_block_oracle(qt, qx):
    """Integer dot per sub-block, scaled by step / s_a, summed in block order."""
    rows, cols = qt.shape
    sb = qt.spec.sub_block_size
    per_super = qt.spec.sub_blocks_per_super
    codes = qt.codes.tolist()
    acts = [int(a) for a in qx.values]
    out = []
    for r in range(rows):
        acc = 0.0
        for k in range(cols // sb):
            sup, sub = divmod(k, per_super)
            step = int(qt.sub_codes[r, sup, sub]) * float(qt.super_scales[r, sup])
            dot = 0
            for j in range(k * sb, (k + 1) * sb):
                dot += codes[r][j] * acts[j]
            acc += dot * (step / qx.scale)
        out.append(acc)
    return np.array(out)


def roundtrip_bound(W, bits, sub_block, per_super, sub_bits):
    """Per-element upper bound on |dequant(quant(w)) - w|.

    code error <= step/2, plus |code| <= qmax times the error of the
    quantized step, which is at most S16/2 + (2^bs - 1)|S - S16| for the
    super scale S and its half-precision value S16.
    """
    W = np.asarray(W, dtype=np.float64)
    qmax = 2 ** (bits - 1) - 1
    rows, cols = W.shape
    width = sub_block * per_super
    bound = np.zeros_like(W)
    for r in range(rows):
        for s0 in range(0, cols, width):
            alphas = [max(abs(v) for v in W[r, s0 + i * sub_block:s0 + (i + 1) * sub_block])
                      for i in range(per_super)]
            steps = [a / qmax for a in alphas]
            if sub_bits == 0:
                S = steps[0]
                S16 = float(np.float16(S))
                step_err = abs(S16 - S)
            else:
                cmax = 2 ** sub_bits - 1
                S = max(steps) / cmax
                S16 = float(np.float16(S))
                step_err = S16 / 2 + cmax * abs(S - S16)
            for i in range(per_super):
                lo = s0 + i * sub_block
                b = steps[i] / 2 + qmax * step_err
                bound[r, lo:lo + sub_block] = b * (1 + 1e-9) + 1e-300
    return bound


def rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def rel_err(a, b):
    """Norm-wise relative error max|a-b| / max|b|."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a)))


def gelu_ref(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def ln_ref(X, g, b, eps=1e-5):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mu = X.mean(axis=1, keepdims=True)
    var = X.var(axis=1, keepdims=True)
    return (X - mu) / np.sqrt(var + eps) * g + b


def dense(w):
    return np.asarray(w, dtype=np.float64)


def causal_recompute(tokens, weights, config, matvec=None):
    """Full-sequence forward without a cache; logits of every position.

    ``matvec(w, x)`` is the per-vector linear map (default: dense float).
    """
    mv = matvec or (lambda w, x: dense(w) @ x)
    T = len(tokens)
    d, h = config.d, config.h
    dh = d // h
    X = dense(weights.embedding)[list(tokens)]
    mask = np.triu(np.ones((T, T), dtype=bool), k=1)
    for blk in weights.blocks:
        Hn = ln_ref(X, dense(blk.ln1_g), dense(blk.ln1_b))
        Q = np.stack([mv(blk.w_q, v) for v in Hn])
        K = np.stack([mv(blk.w_k, v) for v in Hn])
        V = np.stack([mv(blk.w_v, v) for v in Hn])
        heads = []
        for i in range(h):
            q, k, v = (M[:, i * dh:(i + 1) * dh] for M in (Q, K, V))
            s = q @ k.T / math.sqrt(d)
            s[mask] = -np.inf
            p = np.exp(s - s.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            heads.append(p @ v)
        concat = np.concatenate(heads, axis=1)
        X = X + np.stack([mv(blk.w_x, v) for v in concat])
        Hn = ln_ref(X, dense(blk.ln2_g), dense(blk.ln2_b))
        inner = gelu_ref(np.stack([mv(blk.w_i, v) for v in Hn]) + dense(blk.b_i))
        X = X + np.stack([mv(blk.w_o, v) for v in inner]) + dense(blk.b_o)
    out = ln_ref(X, dense(weights.out_norm_g), dense(weights.out_norm_b))
    return out @ dense(weights.embedding).T
