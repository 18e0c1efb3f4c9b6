# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t
from libc.string cimport memcpy
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real_t:
    float
    double

cdef uint64_t P1 = 0x9E3779B185EBCA87ULL
cdef uint64_t P2 = 0xC2B2AE3D27D4EB4FULL
cdef uint64_t P3 = 0x165667B19E3779F9ULL
cdef uint64_t P4 = 0x85EBCA77C2B2AE63ULL
cdef uint64_t P5 = 0x27D4EB2F165667C5ULL


cdef inline uint64_t _rotl(uint64_t x, int r) nogil:
    return (x << r) | (x >> (64 - r))


cdef inline uint64_t _read64(const uint8_t* p) nogil:
    # little-endian host assumed (x86-64, aarch64)
    cdef uint64_t v
    memcpy(&v, p, 8)
    return v


cdef inline uint64_t _read32(const uint8_t* p) nogil:
    cdef unsigned int v
    memcpy(&v, p, 4)
    return <uint64_t>v


cdef inline uint64_t _round(uint64_t acc, uint64_t lane) nogil:
    acc = acc + lane * P2
    acc = _rotl(acc, 31)
    return acc * P1


cdef inline uint64_t _merge(uint64_t acc, uint64_t val) nogil:
    acc ^= _round(0, val)
    return acc * P1 + P4


cdef uint64_t _xxh64(const uint8_t* p, Py_ssize_t n, uint64_t seed) nogil:
    cdef Py_ssize_t i = 0
    cdef uint64_t v1, v2, v3, v4, h
    if n >= 32:
        v1 = seed + P1 + P2
        v2 = seed + P2
        v3 = seed
        v4 = seed - P1
        while i <= n - 32:
            v1 = _round(v1, _read64(p + i))
            v2 = _round(v2, _read64(p + i + 8))
            v3 = _round(v3, _read64(p + i + 16))
            v4 = _round(v4, _read64(p + i + 24))
            i += 32
        h = _rotl(v1, 1) + _rotl(v2, 7) + _rotl(v3, 12) + _rotl(v4, 18)
        h = _merge(h, v1)
        h = _merge(h, v2)
        h = _merge(h, v3)
        h = _merge(h, v4)
    else:
        h = seed + P5
    h += <uint64_t>n
    while i + 8 <= n:
        h ^= _round(0, _read64(p + i))
        h = _rotl(h, 27) * P1 + P4
        i += 8
    if i + 4 <= n:
        h ^= _read32(p + i) * P1
        h = _rotl(h, 23) * P2 + P3
        i += 4
    while i < n:
        h ^= (<uint64_t>p[i]) * P5
        h = _rotl(h, 11) * P1
        i += 1
    h ^= h >> 33
    h *= P2
    h ^= h >> 29
    h *= P3
    h ^= h >> 32
    return h


def xxh64(const uint8_t[::1] data, seed=0):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t n = data.shape[0]
    if n == 0:
        return _xxh64(NULL, 0, s)
    return _xxh64(&data[0], n, s)


def hash_tokens(list tokens, seed, num_bins):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t nb = <uint64_t>num_bins
    cdef Py_ssize_t j, n = len(tokens)
    cdef cnp.ndarray[int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef bytes tok
    for j in range(n):
        tok = tokens[j]
        out[j] = <int64_t>(_xxh64(<const uint8_t*><char*>tok, len(tok), s) % nb)
    return out


def coalesce_rows(rows, grads):
    cdef int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef double[:, ::1] g = np.ascontiguousarray(grads, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], d = g.shape[1]
    cdef int64_t[::1] order = np.argsort(np.asarray(r), kind="stable").astype(np.int64)
    cdef Py_ssize_t i, k, u = 0
    cdef int64_t cur
    uniq_arr = np.empty(n, dtype=np.int64)
    summed_arr = np.zeros((n, d), dtype=np.float64)
    cdef int64_t[::1] uniq = uniq_arr
    cdef double[:, ::1] summed = summed_arr
    if n == 0:
        return uniq_arr, summed_arr
    cur = r[order[0]]
    uniq[0] = cur
    for i in range(n):
        if r[order[i]] != cur:
            u += 1
            cur = r[order[i]]
            uniq[u] = cur
        for k in range(d):
            summed[u, k] += g[order[i], k]
    return uniq_arr[:u + 1], summed_arr[:u + 1]


def _lazy_adam_rows(real_t[:, ::1] table, real_t[:, ::1] m, real_t[:, ::1] v,
                    const int64_t[::1] rows, const double[:, ::1] grads,
                    double lr, double beta1, double beta2, double eps,
                    double bc1, double bc2):
    cdef Py_ssize_t i, k, row, n = rows.shape[0], d = table.shape[1]
    cdef double gi, mn, vn, step
    with nogil:
        for i in range(n):
            row = rows[i]
            for k in range(d):
                gi = grads[i, k]
                mn = beta1 * <double>m[row, k] + (1.0 - beta1) * gi
                vn = beta2 * <double>v[row, k] + (1.0 - beta2) * gi * gi
                step = lr * (mn / bc1) / (sqrt(vn / bc2) + eps)
                m[row, k] = <real_t>mn
                v[row, k] = <real_t>vn
                table[row, k] = <real_t>(<double>table[row, k] - step)


def lazy_adam_rows(table, m, v, rows, grads, lr, beta1, beta2, eps, bc1, bc2):
    if rows.shape[0] == 0:
        return
    _lazy_adam_rows(table, m, v,
                    np.ascontiguousarray(rows, dtype=np.int64),
                    np.ascontiguousarray(grads, dtype=np.float64),
                    lr, beta1, beta2, eps, bc1, bc2)
