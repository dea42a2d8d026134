import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mixed_block_oracle, naive_matvec, rel_err
from qedge import (
    dequantize_activation,
    dequantize_tensor,
    dequantize_ternary,
    qmatvec,
    quantize_activation,
    quantize_tensor,
    quantize_ternary,
    ref_matvec,
    ternary_matvec,
)
from qedge.errors import InvalidArgumentError, ShapeMismatchError
from qedge.formats import quant_spec
from qedge.kernels import (
    OpCounter,
    block_dots,
    counting_array,
    ternary_accumulate,
    ternary_accumulators,
)
from qedge.quant import QuantizedActivation, QuantizedTensor, TernaryTensor
from qedge.packing import pack_trits


def test_ref_matvec_examples():
    assert ref_matvec(np.eye(2), [3, 4]).tolist() == [3, 4]
    assert ref_matvec([[1, 2], [3, 4]], [1, 1]).tolist() == [3, 7]


def test_ref_matvec_matches_naive_bitwise():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m, n = rng.integers(1, 40, size=2)
        W, x = rng.normal(size=(m, n)), rng.normal(size=n)
        assert np.array_equal(ref_matvec(W, x), naive_matvec(W, x))


def test_ref_matvec_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ref_matvec(np.eye(3), [1, 2])


def test_qmatvec_zero_codes():
    qt = quantize_tensor(np.zeros((4, 256)), "q4k")
    qx = quantize_activation(np.random.default_rng(0).normal(size=256))
    assert not qmatvec(qt, qx).any()


def test_qmatvec_forced_arithmetic():
    # 1x256 codes all 1 with step 0.5; activation codes all 1 with s_a = 2
    spec = quant_spec("q4k")
    qt = QuantizedTensor(
        spec, (1, 256), np.ones((1, 256), np.int8),
        np.ones((1, 1, 8), np.uint8), np.array([[0.5]], np.float16),
    )
    qx = QuantizedActivation(np.ones(256, np.int8), 2.0)
    assert qmatvec(qt, qx).tolist() == [256 * 1 * 1 * (0.5 / 2)] == [64.0]


def test_qmatvec_random_q4k_bit_exact():
    rng = np.random.default_rng(9)
    qt = quantize_tensor(rng.normal(size=(64, 256)), "q4k")
    qx = quantize_activation(rng.normal(size=256))
    y = qmatvec(qt, qx)
    assert np.array_equal(y, mixed_block_oracle(qt, qx))
    free = ref_matvec(dequantize_tensor(qt), dequantize_activation(qx))
    assert rel_err(y, free) <= 1e-5


def test_qmatvec_rejects_ternary_and_bad_shapes():
    tt = quantize_ternary(np.ones((2, 256)))
    qx = quantize_activation(np.ones(256))
    with pytest.raises(InvalidArgumentError):
        qmatvec(tt, qx)
    with pytest.raises(ShapeMismatchError):
        qmatvec(quantize_tensor(np.ones((2, 256)), "q4k"), quantize_activation(np.ones(128)))
    with pytest.raises(InvalidArgumentError):
        ternary_matvec(quantize_tensor(np.ones((2, 256)), "q4k"), qx)


@pytest.mark.parametrize("fmt", ["q8", "q6k", "q4k", "q2k"])
def test_qmatvec_independent_of_worker_count(fmt):
    rng = np.random.default_rng(2)
    qt = quantize_tensor(rng.normal(size=(37, 512)), fmt)
    qx = quantize_activation(rng.normal(size=512))
    y1 = qmatvec(qt, qx, workers=1)
    for w in (2, 3, 8):
        assert np.array_equal(qmatvec(qt, qx, workers=w), y1)


def test_qedge_threads_env(monkeypatch):
    rng = np.random.default_rng(2)
    qt = quantize_tensor(rng.normal(size=(16, 256)), "q2k")
    qx = quantize_activation(rng.normal(size=256))
    base = qmatvec(qt, qx, workers=1)
    monkeypatch.setenv("QEDGE_THREADS", "4")
    assert np.array_equal(qmatvec(qt, qx), base)
    monkeypatch.setenv("QEDGE_THREADS", "lots")
    with pytest.raises(InvalidArgumentError):
        qmatvec(qt, qx)


@settings(max_examples=50, deadline=None)
@given(fmt=st.sampled_from(["q8", "q6k", "q4k", "q2k"]), seed=st.integers(0, 2**32 - 1))
def test_integer_linearity(fmt, seed):
    rng = np.random.default_rng(seed)
    qt = quantize_tensor(rng.normal(size=(5, 256)), fmt)
    a = rng.integers(-63, 64, size=256)
    b = rng.integers(-63, 64, size=256)
    assert np.array_equal(block_dots(qt, a + b), block_dots(qt, a) + block_dots(qt, b))


def test_block_dots_extreme_values_exact():
    spec = quant_spec("q8")
    qt = QuantizedTensor(spec, (1, 64), np.full((1, 64), 127, np.int8),
                         np.ones((1, 2, 1), np.uint8), np.ones((1, 2), np.float16))
    assert block_dots(qt, np.full(64, -127)).tolist() == [[-32 * 127 * 127] * 2]


# --- ternary -------------------------------------------------------------------

def _ternary(trits, gamma):
    trits = np.asarray(trits, dtype=np.int8)
    return TernaryTensor(trits.shape, pack_trits(trits), gamma)


def test_ternary_all_plus_one():
    n = 10
    tt = _ternary(np.ones((3, n)), 2.0)
    qx = QuantizedActivation(np.ones(n, np.int8), 1.0)
    assert ternary_matvec(tt, qx).tolist() == [n * 2.0] * 3


def test_ternary_forced():
    tt = _ternary([[1, -1, 0]], 1.0)
    qx = QuantizedActivation(np.array([5, 3, 9], np.int8), 1.0)
    assert ternary_matvec(tt, qx).tolist() == [2.0]


def test_ternary_empty_rows():
    tt = _ternary([[0, 0, 0], [1, 1, 1], [0, 0, 0], [-1, 0, 0]], 1.0)
    qx = QuantizedActivation(np.array([5, 3, 9], np.int8), 1.0)
    assert ternary_matvec(tt, qx).tolist() == [0.0, 17.0, 0.0, -5.0]


def test_ternary_random_vs_float_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m, n = rng.integers(1, 64, size=2)
        tt = quantize_ternary(rng.normal(size=(m, n)))
        qx = quantize_activation(rng.normal(size=n))
        y = ternary_matvec(tt, qx)
        ref = ref_matvec(dequantize_ternary(tt), dequantize_activation(qx))
        assert rel_err(y, ref) <= 1e-6


def test_ternary_is_multiply_free():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m, n = rng.integers(1, 20, size=2)
        tt = quantize_ternary(rng.normal(size=(m, n)))
        qx = quantize_activation(rng.normal(size=n))
        counter = OpCounter()
        pos, neg = tt.sign_index
        acc = ternary_accumulate(pos, neg, counting_array(qx.values, counter))
        assert counter.muls == 0
        assert [int(a) for a in acc] == ternary_accumulators(tt, qx).values.tolist()


def test_counting_int_counts_multiplications():
    counter = OpCounter()
    a = counting_array([2, 3], counter)
    assert int(a[0] * a[1]) == 6 and counter.muls == 1
    assert int((a @ a)) == 13 and counter.muls == 3


def test_ternary_worker_independent():
    rng = np.random.default_rng(6)
    tt = quantize_ternary(rng.normal(size=(33, 100)))
    qx = quantize_activation(rng.normal(size=100))
    assert np.array_equal(ternary_matvec(tt, qx, workers=4), ternary_matvec(tt, qx, workers=1))
