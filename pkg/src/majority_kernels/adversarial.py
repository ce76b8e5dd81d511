"""Adversarial slice weights: one ascent step on per-output-unit probabilities.

Here probabilities have shape ``(m, e)``: one simplex vector per output unit,
shared by all ``n`` inputs of that unit.
"""
from __future__ import annotations

import numpy as np

from .mk_layer import ExtendedKernel

PROB_FLOOR = 1e-6


def uniform_unit_probs(m: int, e: int) -> np.ndarray:
    return np.full((m, e), 1.0 / e)


def expand_unit_probs(p, n: int) -> np.ndarray:
    """Broadcast (m, e) unit probabilities to a full (n, m, e) tensor."""
    return np.ascontiguousarray(np.broadcast_to(p, (n,) + np.shape(p)))


def prob_gradient(kernel: ExtendedKernel, kernel_grad) -> np.ndarray:
    """dL/dp[j, k] = sum_i w[i, j, k] * dL/dW[i, j] for W = sum_k p[:, :, k] w[:, :, k]."""
    return np.einsum("ijk,ij->jk", kernel.weights, kernel_grad)


def normalize_probs(p, floor: float = PROB_FLOOR) -> np.ndarray:
    """Clamp to ``floor`` and rescale each last-axis vector to sum to one."""
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    return p / p.sum(axis=-1, keepdims=True)


def ascend(p, grad, epsilon_p: float) -> np.ndarray:
    return normalize_probs(p + epsilon_p * grad)


def kl_to_uniform(p) -> np.ndarray:
    """KL(p || uniform) per last-axis vector, natural log, 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    e = p.shape[-1]
    safe = np.where(p > 0.0, p, 1.0)
    return np.sum(np.where(p > 0.0, p * np.log(safe * e), 0.0), axis=-1)


def blend_weight(p) -> np.ndarray:
    """KL(p || uniform) / ln e clamped to [0, 1]: 0 at uniform, 1 at a vertex."""
    e = np.shape(p)[-1]
    if e == 1:
        return np.ones(np.shape(p)[:-1])
    return np.clip(kl_to_uniform(p) / np.log(e), 0.0, 1.0)


def blend(p_adv, random_p, u) -> np.ndarray:
    """u * p_adv + (1 - u) * random_p, per vector.

    ``p_adv`` is (m, e), ``random_p`` is (n, m, e), ``u`` is (m,); the result
    is (n, m, e) and stays on the simplex.
    """
    u = np.asarray(u)[:, None]
    return u * np.asarray(p_adv) + (1.0 - u) * np.asarray(random_p)
