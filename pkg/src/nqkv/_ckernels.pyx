# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for block quantization and masked decode attention.

Must stay numerically interchangeable with ``_pykernels``: same operation
order, no FMA contraction (built with -ffp-contract=off).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, sqrt

cnp.import_array()


def quantize_rows(const double[:, ::1] x, Py_ssize_t block_size,
                  const double[::1] codepoints, int zero_index):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t nblocks = (cols + block_size - 1) // block_size
    cdef Py_ssize_t n = codepoints.shape[0]
    scales = np.empty((rows, nblocks), dtype=np.float32)
    indices = np.empty((rows, cols), dtype=np.uint8)
    work = np.empty(cols, dtype=np.float64)
    counts = np.empty(cols, dtype=np.float64)
    cdef float[:, ::1] sv = scales
    cdef unsigned char[:, ::1] iv = indices
    cdef double* y = <double*>cnp.PyArray_DATA(work)
    cdef double* cnt = <double*>cnp.PyArray_DATA(counts)
    cdef const double* cp = &codepoints[0]
    cdef const double* row
    cdef Py_ssize_t r, b, i, j, lo, hi, left, upper, lower
    cdef long long pick
    cdef double amax, a, s, c
    cdef float s32

    with nogil:
        for r in range(rows):
            row = &x[r, 0]
            for b in range(nblocks):
                lo = b * block_size
                hi = lo + block_size
                if hi > cols:
                    hi = cols
                amax = 0.0
                for j in range(lo, hi):
                    a = fabs(row[j])
                    if a > amax:
                        amax = a
                s32 = <float>amax
                sv[r, b] = s32
                s = <double>s32
                if s == 0.0:
                    for j in range(lo, hi):
                        iv[r, j] = <unsigned char>zero_index
                    continue
                for j in range(lo, hi):
                    y[j] = row[j] / s
                    cnt[j] = 0.0
                # lower bound (first i with cp[i] >= y) by counting; the loop
                # over elements is branch-free, and double counters let it
                # vectorize on baseline SSE2
                for i in range(n):
                    c = cp[i]
                    for j in range(lo, hi):
                        cnt[j] += 1.0 if c < y[j] else 0.0
                for j in range(lo, hi):
                    left = <Py_ssize_t>cnt[j]
                    upper = left - (left == n)
                    lower = left - (left > 0)
                    pick = fabs(y[j] - cp[upper]) < fabs(y[j] - cp[lower])
                    iv[r, j] = <unsigned char>(lower + pick * (upper - lower))
    return scales, indices


def pack_nibbles(const unsigned char[:, ::1] indices, int pad_index):
    cdef Py_ssize_t rows = indices.shape[0], cols = indices.shape[1]
    cdef Py_ssize_t width = (cols + 1) // 2
    packed = np.empty((rows, width), dtype=np.uint8)
    cdef unsigned char[:, ::1] pv = packed
    cdef Py_ssize_t r, i
    cdef unsigned char hi_nib
    with nogil:
        for r in range(rows):
            for i in range(width):
                if 2 * i + 1 < cols:
                    hi_nib = indices[r, 2 * i + 1]
                else:
                    hi_nib = <unsigned char>pad_index
                pv[r, i] = (indices[r, 2 * i] & 0x0F) | ((hi_nib & 0x0F) << 4)
    return packed


def unpack_nibbles(const unsigned char[:, ::1] packed, Py_ssize_t cols):
    cdef Py_ssize_t rows = packed.shape[0]
    out = np.empty((rows, cols), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out
    cdef Py_ssize_t r, j
    cdef unsigned char byte
    with nogil:
        for r in range(rows):
            for j in range(cols):
                byte = packed[r, j >> 1]
                ov[r, j] = (byte >> 4) if (j & 1) else (byte & 0x0F)
    return out


def dequantize_rows(const unsigned char[:, ::1] packed, const float[:, ::1] scales,
                    Py_ssize_t cols, Py_ssize_t block_size, const double[::1] codepoints):
    cdef Py_ssize_t rows = packed.shape[0]
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t r, j
    cdef unsigned char byte, idx
    with nogil:
        for r in range(rows):
            for j in range(cols):
                byte = packed[r, j >> 1]
                idx = (byte >> 4) if (j & 1) else (byte & 0x0F)
                ov[r, j] = (<double>scales[r, j // block_size]) * codepoints[idx]
    return out


def attend(const double[::1] query, const double[:, ::1] keys,
           const double[:, ::1] values, Py_ssize_t valid_len, Py_ssize_t num_heads):
    cdef Py_ssize_t length = keys.shape[0], width = keys.shape[1]
    cdef Py_ssize_t head_dim = width // num_heads
    out = np.empty(width, dtype=np.float64)
    weights = np.empty((num_heads, length), dtype=np.float64)
    cdef double[::1] ov = out
    cdef double[:, ::1] wv = weights
    cdef double norm = sqrt(<double>head_dim)
    cdef Py_ssize_t h, j, c, base
    cdef double acc, peak, total, logit

    with nogil:
        for h in range(num_heads):
            base = h * head_dim
            peak = -INFINITY
            for j in range(length):
                if j < valid_len:
                    acc = keys[j, base] * query[base]
                    for c in range(1, head_dim):
                        acc = acc + keys[j, base + c] * query[base + c]
                    logit = acc / norm
                else:
                    logit = -INFINITY
                wv[h, j] = logit
                if logit > peak:
                    peak = logit
            wv[h, 0] = exp(wv[h, 0] - peak)
            total = wv[h, 0]
            for j in range(1, length):
                wv[h, j] = exp(wv[h, j] - peak)
                total = total + wv[h, j]
            for j in range(length):
                wv[h, j] = wv[h, j] / total
            for c in range(head_dim):
                acc = wv[h, 0] * values[0, base + c]
                for j in range(1, length):
                    acc = acc + wv[h, j] * values[j, base + c]
                ov[base + c] = acc
    return out, weights
