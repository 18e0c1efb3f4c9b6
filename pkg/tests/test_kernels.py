import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctrembed import _kernels_py, kernels

compiled = kernels.compiled_module()
BACKENDS = [pytest.param(_kernels_py, id="python")]
if compiled is not None:
    BACKENDS.append(pytest.param(compiled, id="cython"))
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")

# reference digests from the xxHash project's XXH64 (verified once with the
# upstream C implementation, then frozen)
XXH64_VECTORS = [
    (b"", 0, 0xEF46DB3751D8E999),
    (b"", 1, 0xD5AFBA1336A3BE4B),
    (b"a", 0, 0xD24EC4F1A98C6E5B),
    (b"abc", 0, 0x44BC2CF5AD770999),
    (b"abc", 1, 0xBEA9CA8199328908),
    (b"abc", 2 ** 64 - 1, 0x28306E589CC02176),
    (b"hello world!", 0, 0x9BB9A01DC10F4709),
    (b"0123456789abcdef" * 6, 0, 0x6A422D2604218AC2),
    (b"0123456789abcdef" * 6, 1, 0xD6D8CDB9F82A1097),
]


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("data,seed,digest", XXH64_VECTORS)
def test_xxh64_vectors(impl, data, seed, digest):
    assert impl.xxh64(data, seed) == digest


def test_backend_reported():
    assert kernels.BACKEND in ("python", "cython")


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=80), st.integers(0, 2 ** 64 - 1))
def test_xxh64_backends_agree(data, seed):
    assert compiled.xxh64(data, seed) == _kernels_py.xxh64(data, seed)


@needs_compiled
def test_hash_tokens_backends_agree():
    rng = np.random.default_rng(3)
    toks = [rng.bytes(int(n)) for n in rng.integers(0, 40, size=500)]
    for nb in (1, 7, 2 ** 22):
        np.testing.assert_array_equal(compiled.hash_tokens(toks, 9, nb),
                                      _kernels_py.hash_tokens(toks, 9, nb))


@pytest.mark.parametrize("impl", BACKENDS)
def test_coalesce_rows_sums_duplicates(impl):
    rows = np.array([5, 2, 5, 5, 0])
    grads = np.arange(10, dtype=float).reshape(5, 2)
    uniq, summed = impl.coalesce_rows(rows, grads)
    np.testing.assert_array_equal(uniq, [0, 2, 5])
    np.testing.assert_array_equal(summed, [[8, 9], [2, 3], [0 + 4 + 6, 1 + 5 + 7]])


@pytest.mark.parametrize("impl", BACKENDS)
def test_coalesce_rows_empty(impl):
    uniq, summed = impl.coalesce_rows(np.zeros(0, np.int64), np.zeros((0, 3)))
    assert uniq.shape == (0,) and summed.shape == (0, 3)


@needs_compiled
def test_coalesce_rows_backends_bit_identical():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 50, size=2000)
    grads = rng.normal(size=(2000, 6))
    a = compiled.coalesce_rows(rows, grads)
    b = _kernels_py.coalesce_rows(rows, grads)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lazy_adam_rows_backends_bit_identical(dtype):
    tabs = []
    for impl in (compiled, _kernels_py):
        t = np.linspace(-1.0, 1.0, 120).astype(dtype).reshape(40, 3)
        m = np.zeros_like(t)
        v = np.zeros_like(t)
        r2 = np.random.default_rng(7)
        for step in range(1, 30):
            rows = np.unique(r2.integers(0, 40, size=8))
            g = r2.normal(size=(rows.shape[0], 3))
            impl.lazy_adam_rows(t, m, v, rows, g, 0.01, 0.9, 0.999, 1e-8,
                                1 - 0.9 ** step, 1 - 0.999 ** step)
        tabs.append((t, m, v))
    for x, y in zip(*tabs):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("impl", BACKENDS)
def test_lazy_adam_rows_leaves_other_rows(impl):
    t = np.ones((10, 2), dtype=np.float32)
    m = np.zeros_like(t)
    v = np.zeros_like(t)
    impl.lazy_adam_rows(t, m, v, np.array([3]), np.array([[1.0, -1.0]]),
                        0.001, 0.9, 0.999, 1e-8, 0.1, 0.001)
    changed = np.any(t != 1.0, axis=1)
    np.testing.assert_array_equal(np.flatnonzero(changed), [3])
    assert np.all(m[np.arange(10) != 3] == 0)
