# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-example ensemble kernels.

Same contracts as :mod:`dissent._kernels_py`.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def rank_sums(probs):
    cdef const double[:, :, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], b = p.shape[1], k = p.shape[2]
    out_arr = np.zeros((b, k), dtype=np.int64)
    if b == 0 or k == 0:
        return out_arr
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t m, e, i, j
    cdef cnp.int64_t r
    cdef double pi
    cdef const double* row
    cdef cnp.int64_t* acc
    with nogil:
        for e in range(b):
            acc = &out[e, 0]
            for m in range(n):
                row = &p[m, e, 0]
                for i in range(k):
                    pi = row[i]
                    # labels ahead of i: strictly larger, or equal with a lower index
                    r = 0
                    for j in range(i):
                        r += row[j] >= pi
                    for j in range(i + 1, k):
                        r += row[j] > pi
                    acc[i] += r
    return out_arr


def agreement(probs):
    cdef const double[:, :, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], b = p.shape[1], k = p.shape[2]
    if n < 2:
        raise ValueError("agreement needs at least two members")
    ja_arr = np.zeros(b, dtype=np.float64)
    grad_arr = np.empty((n, b, k), dtype=np.float64)
    total_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] ja = ja_arr
    cdef double[:, :, ::1] grad = grad_arr
    cdef double[::1] total = total_arr
    cdef double pairs = n * (n - 1) / 2.0
    cdef double sq_total, sq_each, inner, g
    cdef Py_ssize_t m, e, i
    with nogil:
        for e in range(b):
            sq_total = 0.0
            sq_each = 0.0
            for i in range(k):
                total[i] = 0.0
                for m in range(n):
                    total[i] += p[m, e, i]
                    sq_each += p[m, e, i] * p[m, e, i]
                sq_total += total[i] * total[i]
            ja[e] = 0.5 * (sq_total - sq_each) / pairs
            for m in range(n):
                inner = 0.0
                for i in range(k):
                    inner += (total[i] - p[m, e, i]) * p[m, e, i]
                inner /= pairs
                for i in range(k):
                    g = (total[i] - p[m, e, i]) / pairs
                    grad[m, e, i] = p[m, e, i] * (g - inner)
    return ja_arr, grad_arr
