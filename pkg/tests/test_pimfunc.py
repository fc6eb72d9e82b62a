import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sustaindc import estimator, pimfunc
from sustaindc.pimfunc import AdcConfig, NttParams, TrgState, Word


def dense_apply(matrix, x):
    return (matrix.dense() @ np.asarray(x)).tolist()


def test_shift_matrix_examples():
    assert np.array_equal(pimfunc.shift_matrix(4, 0).dense(), np.eye(4, dtype=int))
    assert pimfunc.apply_perm(pimfunc.shift_matrix(4, 1), ["a", "b", "c", "d"]) == ["d", "a", "b", "c"]
    assert dense_apply(pimfunc.shift_matrix(4, 1), [1, 2, 3, 4]) == [4, 1, 2, 3]
    ident = pimfunc.shift_matrix(8, 3) @ pimfunc.shift_matrix(8, 5)
    assert ident == pimfunc.shift_matrix(8, 0)
    with pytest.raises(pimfunc.PimDomainError):
        pimfunc.shift_matrix(4, 4)
    with pytest.raises(pimfunc.PimSizeError):
        pimfunc.apply_perm(pimfunc.shift_matrix(4, 1), [1, 2, 3])


@pytest.mark.parametrize("n", [4, 8, 16])
def test_shift_composition_all(n):
    x = np.random.default_rng(n).integers(0, 12289, n).tolist()
    for s in range(n):
        for t in range(n):
            lhs = pimfunc.apply_perm(pimfunc.shift_matrix(n, s), pimfunc.apply_perm(pimfunc.shift_matrix(n, t), x))
            assert lhs == pimfunc.apply_perm(pimfunc.shift_matrix(n, (s + t) % n), x)


@given(st.integers(1, 32), st.data())
def test_apply_perm_matches_dense(n, data):
    s = data.draw(st.integers(0, n - 1))
    x = data.draw(st.lists(st.integers(0, 12288), min_size=n, max_size=n))
    m = pimfunc.shift_matrix(n, s)
    assert pimfunc.apply_perm(m, x, 12289) == dense_apply(m, x)


def test_add_mul_examples():
    assert pimfunc.associative_add(Word(3, 3), Word(5, 3)) == Word(8, 4)
    assert pimfunc.associative_add(Word(0, 8), Word(200, 8)).value == 200
    assert pimfunc.mul(Word(0, 4), Word(9, 4)).value == 0
    assert pimfunc.mul(Word(7, 3), Word(6, 3)) == Word(42, 6)


def test_add_mul_exhaustive_8bit():
    for a in range(256):
        wa = Word(a, 8)
        for b in range(256):
            wb = Word(b, 8)
            assert pimfunc.associative_add(wa, wb).value == a + b
            assert pimfunc.mul(wa, wb).value == a * b


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_add_mul_wide(a, b):
    assert pimfunc.associative_add(Word(a, 32), Word(b, 32)).value == a + b
    assert pimfunc.mul(Word(a, 32), Word(b, 32)).value == a * b


def test_word_domain():
    with pytest.raises(pimfunc.PimDomainError):
        Word(16, 4)
    with pytest.raises(pimfunc.PimDomainError):
        Word(0, 65)


def test_logic_ops():
    assert pimfunc.logic_op("AND", Word(0b1100, 4), Word(0b1010, 4)).value == 0b1000
    for x in range(16):
        assert pimfunc.logic_op("XOR", Word(x, 4), Word(x, 4)).value == 0
        for y in range(16):
            assert pimfunc.logic_op("AND", Word(x, 4), Word(y, 4)).value == x & y
            assert pimfunc.logic_op("XOR", Word(x, 4), Word(y, 4)).value == x ^ y
    with pytest.raises(pimfunc.PimSizeError):
        pimfunc.logic_op("AND", Word(1, 4), Word(1, 5))


def test_adc_anchor_and_disabled():
    assert pimfunc.adc_quantize(0.9) == "1100"
    assert pimfunc.adc_quantize(0.0) == "0000"
    assert pimfunc.adc_quantize(0.9, AdcConfig().disable(1, 3)) == "10"
    with pytest.raises(pimfunc.PimDomainError):
        AdcConfig((0.4, 0.4))
    with pytest.raises(pimfunc.PimDomainError):
        AdcConfig(enabled=(False,) * 4)


@given(st.floats(0, 3), st.floats(0, 3))
def test_adc_monotone(v1, v2):
    lo, hi = sorted((v1, v2))
    a, b = pimfunc.adc_quantize(lo), pimfunc.adc_quantize(hi)
    assert all(not (x == "1" and y == "0") for x, y in zip(a, b))


def test_trg_controller_direction():
    rng = np.random.default_rng(0)
    s = TrgState(bias=1.0)
    assert s.bias == 0.99
    bits, s2 = pimfunc.trg_next_segment(s, rng)
    assert bits.size == 256 and bits.mean() > 0.9
    assert s2.bias < s.bias
    assert s2.counter == min(int(bits.sum()), 255)
    _, s3 = pimfunc.trg_next_segment(TrgState(bias=0.5, gain=0.0), rng)
    assert s3.bias == 0.5


@pytest.mark.parametrize("bias", [0.1, 0.3, 0.7, 0.9])
def test_trg_converges(bias):
    bits, _ = pimfunc.trg_run(TrgState(bias=bias), 3907, np.random.default_rng(7))
    assert abs(bits[:1_000_000][-100_000:].mean() - 0.5) <= 0.01


def test_ntt_small_examples():
    p = NttParams(2)
    assert pow(p.psi, 4, p.q) == 1 and pow(p.psi, 2, p.q) == p.q - 1
    assert pimfunc.ntt([1, 0], p) == pimfunc.ntt_direct([1, 0], p) == [1, 1]
    assert pimfunc.ntt([0] * 8, NttParams(8)) == [0] * 8
    with pytest.raises(pimfunc.PimDomainError):
        pimfunc.ntt([1, 2, 3], NttParams(2))
    with pytest.raises(pimfunc.PimDomainError):
        pimfunc.ntt([12289, 0], NttParams(2))
    with pytest.raises(pimfunc.PimDomainError):
        NttParams(32768)


@pytest.mark.parametrize("n", [2, 8, 64])
@pytest.mark.parametrize("montgomery", [False, True])
def test_ntt_matches_quadratic_oracle(n, montgomery):
    p = NttParams(n, montgomery=montgomery)
    rng = np.random.default_rng(n)
    for _ in range(5):
        x = rng.integers(0, p.q, n).tolist()
        assert pimfunc.ntt(x, p) == pimfunc.ntt_direct(x, p)


def test_ntt_negacyclic_convolution():
    # pointwise products in the transform domain multiply polynomials mod x^n + 1
    n, q = 8, 12289
    p = NttParams(n)
    rng = np.random.default_rng(1)
    a, b = rng.integers(0, q, n), rng.integers(0, q, n)
    want = [0] * n
    for i in range(n):
        for j in range(n):
            sign = 1 if i + j < n else -1
            want[(i + j) % n] = (want[(i + j) % n] + sign * int(a[i]) * int(b[j])) % q
    prod = [x * y % q for x, y in zip(pimfunc.ntt(a, p), pimfunc.ntt(b, p))]
    assert pimfunc.intt(prod, p) == want


@pytest.mark.parametrize("n", [2, 8, 256, 1024])
def test_ntt_round_trip(n):
    rng = np.random.default_rng(0)
    for mont in (False, True):
        p = NttParams(n, montgomery=mont)
        for _ in range(100):
            x = rng.integers(0, p.q, n).tolist()
            assert pimfunc.intt(pimfunc.ntt(x, p), p) == x


def test_workloads():
    w = pimfunc.workload_descriptor("ntt32k")
    assert w.op_mix["butterflies"] == 32768 // 2 * 15
    assert w.op_mix["modmul"] == w.op_mix["butterflies"] and w.op_mix["modadd"] == 2 * w.op_mix["butterflies"]
    assert w.total_flops == 3 * w.op_mix["butterflies"]
    assert w.op_mix["shift_fraction"] >= 0.4
    assert not w.estimate
    alex = pimfunc.workload_descriptor("alexnet")
    assert alex.estimate and alex.total_flops == pytest.approx(1.45e9, rel=0.01)
    sha = pimfunc.workload_descriptor("sha3_1088")
    assert sha.estimate and len(sha.kernels) == 25
    for name in pimfunc.WORKLOADS:
        g = pimfunc.workload_descriptor(name).to_task_graph(1.0)
        assert isinstance(g, estimator.TaskGraph)
    with pytest.raises(LookupError):
        pimfunc.workload_descriptor("foo")
