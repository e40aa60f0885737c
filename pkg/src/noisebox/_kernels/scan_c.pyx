# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled first-order linear recurrence h[t] = a[t] * h[t-1] + x[t], h[-1] = 0.

Arrays are (L, M) C-contiguous float64; M independent lanes per step.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scan_seq(const double[:, ::1] a, const double[:, ::1] x):
    cdef Py_ssize_t L = a.shape[0], M = a.shape[1], t, m
    out = np.empty((L, M), dtype=np.float64)
    cdef double[:, ::1] h = out
    if L == 0:
        return out
    with nogil:
        for m in range(M):
            h[0, m] = x[0, m]
        for t in range(1, L):
            for m in range(M):
                h[t, m] = a[t, m] * h[t - 1, m] + x[t, m]
    return out


def scan_chunked(const double[:, ::1] a, const double[:, ::1] x, Py_ssize_t chunk):
    """Chunk-local scans, a prefix combine over chunk summaries, then a fix-up pass."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    cdef Py_ssize_t L = a.shape[0], M = a.shape[1]
    cdef Py_ssize_t K = (L + chunk - 1) // chunk
    cdef Py_ssize_t k, t, m, start, stop
    out = np.empty((L, M), dtype=np.float64)
    acum_arr = np.empty((L, M), dtype=np.float64)
    carry_arr = np.zeros((K, M), dtype=np.float64)
    cdef double[:, ::1] h = out
    cdef double[:, ::1] acum = acum_arr
    cdef double[:, ::1] carry = carry_arr
    with nogil:
        # independent per chunk
        for k in range(K):
            start = k * chunk
            stop = start + chunk
            if stop > L:
                stop = L
            for m in range(M):
                h[start, m] = x[start, m]
                acum[start, m] = a[start, m]
            for t in range(start + 1, stop):
                for m in range(M):
                    h[t, m] = a[t, m] * h[t - 1, m] + x[t, m]
                    acum[t, m] = acum[t - 1, m] * a[t, m]
        # carry[k] = state entering chunk k, via (A, b) o (A', b') = (A A', A' b + b')
        for k in range(1, K):
            stop = k * chunk - 1
            for m in range(M):
                carry[k, m] = acum[stop, m] * carry[k - 1, m] + h[stop, m]
        for k in range(1, K):
            start = k * chunk
            stop = start + chunk
            if stop > L:
                stop = L
            for t in range(start, stop):
                for m in range(M):
                    h[t, m] = h[t, m] + acum[t, m] * carry[k, m]
    return out
