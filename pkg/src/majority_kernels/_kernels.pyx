# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot loops.

Every routine here must stay bit-identical to its twin in ``_fallback``.
Compile with ``-ffp-contract=off`` so multiply-adds are never fused.
"""
import numpy as np


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    """``a @ b`` with each output cell accumulated over k = 0..K-1 in order."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t kk = a.shape[1]
    cdef Py_ssize_t m = b.shape[1]
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, k, j
    cdef double aik
    with nogil:
        for i in range(n):
            for k in range(kk):
                aik = a[i, k]
                # adding a signed zero never changes a sum that started at +0.0
                if aik == 0.0:
                    continue
                for j in range(m):
                    c[i, j] = c[i, j] + aik * b[k, j]
    return out


def aggregate(const double[:, :, ::1] w, const double[:, :, ::1] p):
    """w[..., 0] + sum_{k>=1} p[..., k] * (w[..., k] - w[..., 0])."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    cdef Py_ssize_t e = w.shape[2]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef double base, acc
    with nogil:
        for i in range(n):
            for j in range(m):
                base = w[i, j, 0]
                acc = base
                for k in range(1, e):
                    acc = acc + p[i, j, k] * (w[i, j, k] - base)
                c[i, j] = acc
    return out


def collapse(const double[:, :, ::1] w):
    """Uniform-weight version of :func:`aggregate` (coefficient 1/e)."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    cdef Py_ssize_t e = w.shape[2]
    cdef double coef = 1.0 / <double>e
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef double base, acc
    with nogil:
        for i in range(n):
            for j in range(m):
                base = w[i, j, 0]
                acc = base
                for k in range(1, e):
                    acc = acc + coef * (w[i, j, k] - base)
                c[i, j] = acc
    return out
