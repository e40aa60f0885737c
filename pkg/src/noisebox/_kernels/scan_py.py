"""Pure-numpy linear recurrence kernels (fallback for the compiled module)."""

from __future__ import annotations

import numpy as np


def scan_seq(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    L = a.shape[0]
    h = np.empty_like(x)
    prev = np.zeros(x.shape[1:], dtype=x.dtype)
    for t in range(L):
        prev = a[t] * prev + x[t]
        h[t] = prev
    return h


def combine(left, right):
    """(a, b) o (a', b') = (a a', a' b + b'): apply ``left`` first, then ``right``."""
    a1, b1 = left
    a2, b2 = right
    return a1 * a2, a2 * b1 + b2


def blelloch_exclusive(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Work-efficient exclusive scan of (A[k], B[k]) pairs along axis 0.

    Element k of the result is the composition of elements 0..k-1 (identity
    (1, 0) for k = 0).
    """
    K = A.shape[0]
    n = 1
    while n < K:
        n *= 2
    a = np.ones((n,) + A.shape[1:], dtype=A.dtype)
    b = np.zeros((n,) + B.shape[1:], dtype=B.dtype)
    a[:K], b[:K] = A, B
    s = 1
    while s < n:
        r = np.arange(2 * s - 1, n, 2 * s)
        a[r], b[r] = combine((a[r - s], b[r - s]), (a[r], b[r]))
        s *= 2
    a[n - 1], b[n - 1] = 1.0, 0.0
    s = n // 2
    while s >= 1:
        r = np.arange(2 * s - 1, n, 2 * s)
        la, lb = a[r - s].copy(), b[r - s].copy()
        a[r - s], b[r - s] = a[r], b[r]
        a[r], b[r] = combine((a[r], b[r]), (la, lb))
        s //= 2
    return a[:K], b[:K]


def scan_chunked(a: np.ndarray, x: np.ndarray, chunk: int) -> np.ndarray:
    """Same recurrence as ``scan_seq``; all chunks advance together in one vectorised loop."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    L = a.shape[0]
    K = -(-L // chunk)
    pad = K * chunk - L
    tail = a.shape[1:]
    if pad:
        a = np.concatenate([a, np.ones((pad,) + tail, dtype=a.dtype)])
        x = np.concatenate([x, np.zeros((pad,) + tail, dtype=x.dtype)])
    a = a.reshape((K, chunk) + tail)
    x = x.reshape((K, chunk) + tail)
    h = np.empty_like(x)
    acum = np.empty_like(a)
    hp = np.zeros((K,) + tail, dtype=x.dtype)
    ap = np.ones((K,) + tail, dtype=a.dtype)
    for j in range(chunk):
        hp = a[:, j] * hp + x[:, j]
        ap = ap * a[:, j]
        h[:, j] = hp
        acum[:, j] = ap
    if K > 1:
        _, carry = blelloch_exclusive(acum[:, -1], h[:, -1])
        h[1:] = h[1:] + acum[1:] * carry[1:, None]
    return h.reshape((K * chunk,) + tail)[:L]
