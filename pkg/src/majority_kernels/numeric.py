"""Dense float64 linear algebra and seeded random streams.

Matrices and 3-tensors are plain C-contiguous ``float64`` numpy arrays.
Products go through :func:`matmul`, which accumulates every output cell
strictly left to right over the inner dimension, so results are
bit-reproducible and do not depend on BLAS threading or blocking.

The kernel backend is chosen at import: the compiled Cython module when it
was built, otherwise the numpy twin in ``_fallback``. Set
``MK_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
import zlib

import numpy as np

from . import _fallback

try:
    if os.environ.get("MK_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python backend requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


class ContractError(ValueError):
    """An operation was called with arguments that break its preconditions."""


def backends() -> dict:
    """All importable kernel modules, keyed by name (used by tests and benchmarks)."""
    found = {"python": _fallback}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name}: expected 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: non-finite entries")
    return arr


def as_tensor3(x, name: str = "tensor") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"{name}: expected 3-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with a frozen left-to-right reduction order.

    Raises :class:`ContractError` when ``a.shape[1] != b.shape[0]``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return _impl.matmul(a, b)


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ContractError("stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


class RngStream:
    """Philox counter-based generator addressed by ``(seed, label path)``.

    Children derived with different labels are statistically independent, and
    the same seed and label path always replays the same draw sequence. A
    stream is single-owner; derive a child for each parallel consumer.
    """

    def __init__(self, seed: int, path: tuple = ()):
        if int(seed) < 0:
            raise ContractError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"

    def child(self, label) -> "RngStream":
        return RngStream(self.seed, self.path + (_label_key(label),))

    def derive_seed(self, label) -> int:
        """A 63-bit integer seed for a child, for configs that store plain ints."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path + (_label_key(label),))
        return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def exponential(self, shape) -> np.ndarray:
        """Exp(1) draws, all strictly positive (exact zeros are redrawn)."""
        draws = self._gen.standard_exponential(shape)
        zero = draws == 0.0
        while np.any(zero):
            draws[zero] = self._gen.standard_exponential(int(zero.sum()))
            zero = draws == 0.0
        return draws

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * scale

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)


def sample_exponential(rng: RngStream, count: int) -> np.ndarray:
    if count < 1:
        raise ContractError("sample_exponential: count must be >= 1")
    return rng.exponential(count)
