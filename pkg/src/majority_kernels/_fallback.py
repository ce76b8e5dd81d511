"""Pure numpy twins of the compiled kernels in ``_kernels.pyx``.

The arithmetic is ordered exactly as in the compiled loops, so both backends
produce bit-identical results. Only the loop nesting differs.
"""
import numpy as np


def matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[k]
    return out


def aggregate(w, p):
    base = w[:, :, 0]
    acc = base.copy()
    for k in range(1, w.shape[2]):
        acc = acc + p[:, :, k] * (w[:, :, k] - base)
    return acc


def collapse(w):
    coef = 1.0 / w.shape[2]
    base = w[:, :, 0]
    acc = base.copy()
    for k in range(1, w.shape[2]):
        acc = acc + coef * (w[:, :, k] - base)
    return acc
