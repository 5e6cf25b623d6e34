"""The compiled and fallback kernels must agree bit for bit."""
import numpy as np
import pytest

from mlrq import _fallback
from mlrq.core import Codebook, nearest_sq

from conftest import IMPLS

needs_both = pytest.mark.skipif(len(IMPLS) < 2, reason="compiled kernels not built")


def _random_cum(rng, k):
    return np.concatenate([[0], np.cumsum(rng.integers(1, 1000, size=k))]).astype(np.int64)


@needs_both
@pytest.mark.parametrize("k", [1, 2, 17, 256, 4096])
def test_range_coder_parity(k):
    rng = np.random.default_rng(k)
    cum = _random_cum(rng, k)
    sym = rng.integers(0, k, size=5000).astype(np.int64)
    py, c = IMPLS
    data = py.range_encode(sym, cum)
    assert c.range_encode(sym, cum) == data
    np.testing.assert_array_equal(py.range_decode(data, cum, sym.size), sym)
    np.testing.assert_array_equal(c.range_decode(data, cum, sym.size), sym)


@needs_both
def test_range_decode_garbage_parity():
    rng = np.random.default_rng(3)
    cum = _random_cum(rng, 40)
    junk = rng.integers(0, 256, size=300, dtype=np.uint8).tobytes()
    py, c = IMPLS
    np.testing.assert_array_equal(py.range_decode(junk, cum, 2000), c.range_decode(junk, cum, 2000))


@needs_both
def test_refine_nearest_parity():
    rng = np.random.default_rng(5)
    # integer lattice data produces many exact ties
    C = Codebook(rng.integers(-2, 3, size=(64, 6)).astype(float))
    X = rng.integers(-3, 4, size=(2000, 6)).astype(float)
    py, c = IMPLS
    i1, d1 = nearest_sq(C, X, py)
    i2, d2 = nearest_sq(C, X, c)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(d1, d2)


@needs_both
def test_seq_sqnorm_parity():
    d = np.random.default_rng(1).standard_normal((50, 333))
    py, c = IMPLS
    np.testing.assert_array_equal(py.seq_sqnorm(d), c.seq_sqnorm(d))


def test_seq_sqnorm_is_left_to_right(impl):
    d = np.array([[1e16, 1.0, -1e16, 1.0]])
    # ((1e16 + 1) - ... ) loses the first 1 to rounding; pairwise would not match this
    expected = 0.0
    for v in d[0]:
        expected = expected + v * v
    assert impl.seq_sqnorm(d)[0] == expected


@pytest.mark.parametrize("data, expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a64_vectors(impl, data, expected):
    assert impl.fnv1a64(data) == expected


def test_fallback_name():
    assert _fallback.name == "python"


@pytest.mark.skipif(len(IMPLS) < 2, reason="compiled kernels not built")
def test_thread_count_does_not_change_results():
    from mlrq import _kernels

    rng = np.random.default_rng(8)
    C = rng.integers(-2, 3, size=(32, 5)).astype(float)
    X = rng.integers(-3, 4, size=(5000, 5)).astype(float)
    cn = np.einsum("ij,ij->i", C, C)
    scores = cn[None, :] - 2 * X @ C.T
    thresh = scores.min(axis=1) + 1e-6
    one = _kernels.refine_nearest(X, C, scores, thresh, 1)
    for t in (2, 4, 7):
        many = _kernels.refine_nearest(X, C, scores, thresh, t)
        for a, b in zip(one, many):
            np.testing.assert_array_equal(a, b)
