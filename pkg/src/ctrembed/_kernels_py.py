"""Pure-Python/numpy reference versions of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
The compiled versions are used when available; these are the fallback and
the oracle the extension is tested against.
"""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_P1 = 0x9E3779B185EBCA87
_P2 = 0xC2B2AE3D27D4EB4F
_P3 = 0x165667B19E3779F9
_P4 = 0x85EBCA77C2B2AE63
_P5 = 0x27D4EB2F165667C5


def _rotl(x, r):
    return ((x << r) | (x >> (64 - r))) & _MASK


def _round(acc, lane):
    acc = (acc + lane * _P2) & _MASK
    acc = _rotl(acc, 31)
    return (acc * _P1) & _MASK


def _merge(acc, val):
    acc ^= _round(0, val)
    return (acc * _P1 + _P4) & _MASK


def xxh64(data: bytes, seed: int = 0) -> int:
    """XXH64 digest of ``data`` as an unsigned 64-bit integer."""
    seed &= _MASK
    n = len(data)
    i = 0
    if n >= 32:
        v1 = (seed + _P1 + _P2) & _MASK
        v2 = (seed + _P2) & _MASK
        v3 = seed
        v4 = (seed - _P1) & _MASK
        limit = n - 32
        while i <= limit:
            a, b, c, d = np.frombuffer(data, dtype="<u8", count=4, offset=i).tolist()
            v1 = _round(v1, a)
            v2 = _round(v2, b)
            v3 = _round(v3, c)
            v4 = _round(v4, d)
            i += 32
        h = (_rotl(v1, 1) + _rotl(v2, 7) + _rotl(v3, 12) + _rotl(v4, 18)) & _MASK
        h = _merge(h, v1)
        h = _merge(h, v2)
        h = _merge(h, v3)
        h = _merge(h, v4)
    else:
        h = (seed + _P5) & _MASK
    h = (h + n) & _MASK
    while i + 8 <= n:
        lane = int.from_bytes(data[i:i + 8], "little")
        h ^= _round(0, lane)
        h = (_rotl(h, 27) * _P1 + _P4) & _MASK
        i += 8
    if i + 4 <= n:
        lane = int.from_bytes(data[i:i + 4], "little")
        h ^= (lane * _P1) & _MASK
        h = (_rotl(h, 23) * _P2 + _P3) & _MASK
        i += 4
    while i < n:
        h ^= (data[i] * _P5) & _MASK
        h = (_rotl(h, 11) * _P1) & _MASK
        i += 1
    h ^= h >> 33
    h = (h * _P2) & _MASK
    h ^= h >> 29
    h = (h * _P3) & _MASK
    h ^= h >> 32
    return h


def hash_tokens(tokens, seed, num_bins):
    """Hash a sequence of byte strings into ``[0, num_bins)``; returns int64 array."""
    out = np.empty(len(tokens), dtype=np.int64)
    for j, tok in enumerate(tokens):
        out[j] = xxh64(tok, seed) % num_bins
    return out


def coalesce_rows(rows, grads):
    """Sum gradient rows that share an index.

    ``rows`` is a 1-D int64 array of length n, ``grads`` an (n, d) float64
    array. Returns ``(unique_rows, summed)`` with unique_rows sorted ascending.
    """
    rows = np.asarray(rows, dtype=np.int64)
    grads = np.asarray(grads, dtype=np.float64)
    uniq, inverse = np.unique(rows, return_inverse=True)
    summed = np.zeros((uniq.shape[0], grads.shape[1]), dtype=np.float64)
    np.add.at(summed, inverse, grads)
    return uniq, summed


def lazy_adam_rows(table, m, v, rows, grads, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update restricted to ``rows`` of a 2-D table.

    ``rows`` must be distinct. Moments of rows not listed are left untouched.
    ``bc1``/``bc2`` are the bias-correction denominators for the global step.
    """
    if rows.shape[0] == 0:
        return
    g = np.asarray(grads, dtype=np.float64)
    m_new = beta1 * m[rows].astype(np.float64) + (1.0 - beta1) * g
    v_new = beta2 * v[rows].astype(np.float64) + (1.0 - beta2) * g * g
    step = lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
    m[rows] = m_new
    v[rows] = v_new
    table[rows] = table[rows].astype(np.float64) - step
