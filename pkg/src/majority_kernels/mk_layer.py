"""Majority Kernels layer: extended kernels, simplex weights, aggregation.

An extended kernel stores ``e`` slices of an ``n x m`` weight matrix in a
``(n, m, e)`` array plus one shared bias of length ``m``. During training
each entry is mixed with its own simplex weights; at inference the slices
are averaged uniformly.

Aggregation is evaluated as ``w_0 + sum_{k>=1} p_k (w_k - w_0)``, which
equals ``sum_k p_k w_k`` on the simplex but is exact when every slice is
the same and when ``e == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric
from .numeric import ContractError, RngStream


@dataclass
class ExtendedKernel:
    weights: np.ndarray  # (n, m, e)
    bias: np.ndarray  # (m,)

    def __post_init__(self):
        self.weights = numeric.as_tensor3(self.weights, "kernel weights")
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.shape[2] < 1:
            raise ContractError("expansion must be >= 1")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ContractError(
                f"bias length {self.bias.shape[0]} != kernel output dim {self.weights.shape[1]}"
            )
        if not np.all(np.isfinite(self.bias)):
            raise ContractError("kernel bias: non-finite entries")

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @property
    def e(self) -> int:
        return self.weights.shape[2]

    def copy(self) -> "ExtendedKernel":
        return ExtendedKernel(self.weights.copy(), self.bias.copy())


def normalize_draws(raw) -> np.ndarray:
    """Divide each last-axis vector of positive draws by its sum."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw / raw.sum(axis=-1, keepdims=True)


def sample_probability_tensor(rng: RngStream, n: int, m: int, e: int) -> np.ndarray:
    """Per-entry simplex weights: e i.i.d. Exp(1) draws, normalized (Dirichlet(1,...,1))."""
    if min(n, m, e) < 1:
        raise ContractError(f"probability tensor dims must be >= 1, got {(n, m, e)}")
    return normalize_draws(rng.exponential((n, m, e)))


def uniform_probability_tensor(n: int, m: int, e: int) -> np.ndarray:
    return np.full((n, m, e), 1.0 / e)


def is_on_simplex(p, tol: float = 1e-12) -> bool:
    p = np.asarray(p)
    return bool(np.all(p >= 0.0) and np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


def _check_probs(kernel: ExtendedKernel, p) -> np.ndarray:
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.shape != kernel.weights.shape:
        raise ContractError(f"probability shape {p.shape} != kernel shape {kernel.weights.shape}")
    return p


def aggregate(kernel: ExtendedKernel, p) -> np.ndarray:
    """Stochastic kernel: entry (i, j) is sum_k p[i,j,k] * w[i,j,k].

    Evaluated as ``w_0 + sum_{k>=1} p_k (w_k - w_0)``, which equals the sum
    above for p on the simplex and is exact when all slices are equal. The
    first coordinate of ``p`` is implied by the others, so this is not the
    linear form off the simplex.
    """
    p = _check_probs(kernel, p)
    return numeric._impl.aggregate(kernel.weights, p)


def collapse(kernel: ExtendedKernel) -> np.ndarray:
    """Inference kernel: the uniform average of the e slices."""
    return numeric._impl.collapse(kernel.weights)


def perturbation_of(kernel: ExtendedKernel, p) -> np.ndarray:
    """Displacement of the stochastic kernel from the collapsed one."""
    return aggregate(kernel, p) - collapse(kernel)


def perturbation_by_slices(kernel: ExtendedKernel, p) -> np.ndarray:
    """Same quantity as :func:`perturbation_of`, as sum_k (p_k - 1/e) * w_k."""
    p = _check_probs(kernel, p)
    e = kernel.e
    eps = np.zeros((kernel.n, kernel.m))
    for k in range(e):
        eps += (p[:, :, k] - 1.0 / e) * kernel.weights[:, :, k]
    return eps


def init_extended(
    rng: RngStream, n: int, m: int, e: int, fan_in: int | None = None
) -> ExtendedKernel:
    """e independent He-normal initializations (std sqrt(2 / fan_in)); zero bias."""
    if min(n, m, e) < 1:
        raise ContractError(f"kernel dims must be >= 1, got {(n, m, e)}")
    std = np.sqrt(2.0 / (fan_in or n))
    w = rng.normal((e, n, m), scale=std)
    return ExtendedKernel(np.ascontiguousarray(np.moveaxis(w, 0, -1)), np.zeros(m))


def expand_from(
    base, e: int, init_noise: float, rng: RngStream, bias=None
) -> ExtendedKernel:
    """Replicate a trained matrix into e slices, each with its own Gaussian jitter."""
    base = numeric.as_matrix(base, "base kernel")
    if e < 1:
        raise ContractError("expansion must be >= 1")
    if init_noise < 0:
        raise ContractError("init_noise must be >= 0")
    w = np.repeat(base[:, :, None], e, axis=2)
    if init_noise > 0:
        w = w + rng.normal(w.shape, scale=init_noise)
    if bias is None:
        bias = np.zeros(base.shape[1])
    return ExtendedKernel(w, np.array(bias, dtype=np.float64))
