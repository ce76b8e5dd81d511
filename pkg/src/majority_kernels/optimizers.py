"""Plain SGD and Adam, updating parameter arrays in place."""
from __future__ import annotations

import numpy as np

from .numeric import ContractError

GRID_BASE = {"adam": 0.001, "sgd": 0.025}
GRID_FACTOR = 1.5
GRID_EXPONENTS = range(-4, 6)


def grid_rates(kind: str) -> list:
    """The ten candidate learning rates base * 1.5**i, i = -4..5."""
    try:
        base = GRID_BASE[kind]
    except KeyError:
        raise ContractError(f"unknown optimizer {kind!r}") from None
    return [base * GRID_FACTOR**i for i in GRID_EXPONENTS]


def _entries(params, grads):
    for i, (layer, gw, gb) in enumerate(zip(params.layers, grads.weights, grads.biases)):
        yield f"layer{i}.weight", layer.weights, gw, None
        yield f"layer{i}.bias", layer.bias, gb, None


def _check_finite(entries):
    for key, param, grad, index in entries:
        grad = np.asarray(grad)
        expected = param.shape if index is None else param[index].shape
        if grad.shape != expected:
            raise ContractError(f"{key}: gradient shape {grad.shape} != {expected}")
        bad = ~np.isfinite(grad)
        if bad.any():
            where = tuple(int(i) for i in np.argwhere(bad)[0])
            raise FloatingPointError(f"non-finite gradient in {key} at entry {where}: {grad[where]}")


class Optimizer:
    kind = ""

    def __init__(self, learning_rate: float):
        if not learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        self.learning_rate = float(learning_rate)
        self.steps = 0

    def step(self, params, grads):
        """One update of every kernel slice and bias from a GradientSet."""
        self.apply(list(_entries(params, grads)))

    def apply(self, entries):
        """Update ``(key, param, grad, index)`` entries; ``index`` restricts the
        update to ``param[index]`` (the gradient then has that sub-shape)."""
        _check_finite(entries)
        self.steps += 1
        for key, param, grad, index in entries:
            self._update(key, param, np.asarray(grad, dtype=np.float64), index)

    def _update(self, key, param, grad, index):
        raise NotImplementedError


class SGD(Optimizer):
    """theta <- theta - lr * g, no momentum.

    ``bias_learning_rate`` lets the shared (non-expanded) biases move at a
    different rate than the kernels; it defaults to ``learning_rate``.
    """

    kind = "sgd"

    def __init__(self, learning_rate: float, bias_learning_rate: float | None = None):
        super().__init__(learning_rate)
        self.bias_learning_rate = (
            self.learning_rate if bias_learning_rate is None else float(bias_learning_rate)
        )

    def _update(self, key, param, grad, index):
        lr = self.bias_learning_rate if key.endswith(".bias") else self.learning_rate
        if index is None:
            param -= lr * grad
        else:
            param[index] = param[index] - lr * grad


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}

    def _update(self, key, param, grad, index):
        if key not in self.m:
            self.m[key] = np.zeros_like(param)
            self.v[key] = np.zeros_like(param)
        sel = slice(None) if index is None else index
        m = self.beta1 * self.m[key][sel] + (1.0 - self.beta1) * grad
        v = self.beta2 * self.v[key][sel] + (1.0 - self.beta2) * grad * grad
        self.m[key][sel] = m
        self.v[key][sel] = v
        m_hat = m / (1.0 - self.beta1**self.steps)
        v_hat = v / (1.0 - self.beta2**self.steps)
        param[sel] = param[sel] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, learning_rate: float, **kwargs) -> Optimizer:
    if kind == "sgd":
        return SGD(learning_rate, **kwargs)
    if kind == "adam":
        return Adam(learning_rate, **kwargs)
    raise ContractError(f"unknown optimizer {kind!r}")
