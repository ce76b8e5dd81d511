"""MLPs built from extended kernels: forward, loss, exact gradients, HVP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mk_layer
from .mk_layer import ExtendedKernel
from .numeric import ContractError, RngStream, matmul

TOPOLOGIES = {
    "A1": (100,),
    "A2": (200, 100),
    "A3": (400, 200, 100),
}


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    expansion: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ContractError(f"all layer dims must be >= 1, got {dims}")
        if self.expansion < 1:
            raise ContractError("expansion must be >= 1")
        if self.activation != "relu":
            raise ContractError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def with_expansion(self, e: int) -> "NetworkSpec":
        return NetworkSpec(self.input_dim, self.hidden_dims, self.output_dim, e, self.activation)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "expansion": self.expansion,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            int(d["input_dim"]),
            tuple(d["hidden_dims"]),
            int(d["output_dim"]),
            int(d.get("expansion", 1)),
            d.get("activation", "relu"),
        )


@dataclass
class ModelParams:
    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.m != b.n:
                raise ContractError(f"layer dims do not chain: {a.shape} -> {b.shape}")

    @property
    def expansion(self) -> int:
        return self.layers[0].e

    @property
    def input_dim(self) -> int:
        return self.layers[0].n

    @property
    def output_dim(self) -> int:
        return self.layers[-1].m

    def copy(self) -> "ModelParams":
        return ModelParams([layer.copy() for layer in self.layers])

    def collapsed(self) -> "ModelParams":
        """The base-size network used for inference."""
        return ModelParams(
            [ExtendedKernel(mk_layer.collapse(l)[:, :, None], l.bias.copy()) for l in self.layers]
        )

    def spec(self) -> NetworkSpec:
        return NetworkSpec(
            self.input_dim, tuple(l.m for l in self.layers[:-1]), self.output_dim, self.expansion
        )

    def num_collapsed_params(self) -> int:
        return sum(l.n * l.m + l.m for l in self.layers)


@dataclass
class GradientSet:
    weights: list  # (n, m, e) per layer
    biases: list  # (m,) per layer
    kernel_grads: list = field(default_factory=list)  # dL/d(aggregated kernel), (n, m)


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    pre: list  # pre-activations
    kernels: list  # kernel actually used by each layer
    probs: list


def init_params(spec: NetworkSpec, rng: RngStream, expansion: int | None = None) -> ModelParams:
    e = spec.expansion if expansion is None else expansion
    layers = [
        mk_layer.init_extended(rng.child(f"layer{i}"), n, m, e)
        for i, (n, m) in enumerate(spec.layer_dims)
    ]
    return ModelParams(layers)


def params_from_matrices(weights, biases) -> ModelParams:
    return ModelParams(
        [ExtendedKernel(np.asarray(w, dtype=np.float64)[:, :, None], b) for w, b in zip(weights, biases)]
    )


def forward(params: ModelParams, probs, batch) -> tuple:
    """Logits for ``batch`` plus the cache needed by :func:`backward`.

    ``probs`` is a list with one probability tensor per layer; ``None`` (for
    the whole list or any entry) means the uniform weights, i.e. the
    collapsed inference kernel.
    """
    x = np.ascontiguousarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ContractError(f"batch shape {x.shape} does not match input dim {params.input_dim}")
    if probs is None:
        probs = [None] * len(params.layers)
    if len(probs) != len(params.layers):
        raise ContractError("need one probability tensor per layer")
    cache = ForwardCache([], [], [], list(probs))
    h = x
    last = len(params.layers) - 1
    for idx, (layer, p) in enumerate(zip(params.layers, probs)):
        w = mk_layer.collapse(layer) if p is None else mk_layer.aggregate(layer, p)
        z = matmul(h, w) + layer.bias
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.kernels.append(w)
        h = np.maximum(z, 0.0) if idx < last else z
    return h, cache


def log_softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def _check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    return labels


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[1])
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(logits, labels) -> np.ndarray:
    """d(mean CE)/d(logits)."""
    labels = _check_labels(labels, logits.shape[1])
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def backprop(params: ModelParams, cache: ForwardCache, dlogits) -> GradientSet:
    """Chain rule from logit gradients down to every slice and bias."""
    n_layers = len(params.layers)
    kernel_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    dz = dlogits
    for idx in range(n_layers - 1, -1, -1):
        kernel_grads[idx] = matmul(cache.inputs[idx].T, dz)
        bias_grads[idx] = dz.sum(axis=0)
        if idx > 0:
            dh = matmul(dz, cache.kernels[idx].T)
            dz = dh * (cache.pre[idx - 1] > 0.0)
    slice_grads = []
    for layer, g, p in zip(params.layers, kernel_grads, cache.probs):
        if p is None:
            slice_grads.append(np.repeat((g * (1.0 / layer.e))[:, :, None], layer.e, axis=2))
        else:
            slice_grads.append(np.asarray(p) * g[:, :, None])
    return GradientSet(slice_grads, bias_grads, kernel_grads)


def backward(params: ModelParams, probs, batch, labels, cache: ForwardCache) -> GradientSet:
    """Exact gradients of the mean cross-entropy of a batch.

    The slice gradient is ``p[i,j,k] * dL/dW[i,j]`` where ``W`` is the
    aggregated kernel used in the forward pass.
    """
    logits = cache.pre[-1]
    return backprop(params, cache, cross_entropy_grad(logits, labels))


def loss_and_grad(params: ModelParams, probs, batch, labels) -> tuple:
    logits, cache = forward(params, probs, batch)
    return cross_entropy(logits, labels), backward(params, probs, batch, labels, cache)


def predict_proba(params: ModelParams, x) -> np.ndarray:
    logits, _ = forward(params, None, x)
    return softmax(logits)


def evaluate(params: ModelParams, x, labels, chunk: int = 2048) -> tuple:
    """(mean CE, accuracy) of the collapsed network, chunked to bound memory."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan"), float("nan")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(labels), chunk):
        logits, _ = forward(params, None, x[start : start + chunk])
        y = labels[start : start + chunk]
        total_loss += cross_entropy(logits, y) * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / len(labels), correct / len(labels)


# Flattened view of a base-size (e == 1) network: [W_0, b_0, W_1, b_1, ...].

def flatten(params: ModelParams) -> np.ndarray:
    base = params if params.expansion == 1 else params.collapsed()
    parts = []
    for layer in base.layers:
        parts.append(layer.weights[:, :, 0].ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def unflatten(theta, like: ModelParams) -> ModelParams:
    theta = np.asarray(theta, dtype=np.float64)
    layers = []
    pos = 0
    for layer in like.layers:
        w = theta[pos : pos + layer.n * layer.m].reshape(layer.n, layer.m)
        pos += layer.n * layer.m
        b = theta[pos : pos + layer.m]
        pos += layer.m
        layers.append(ExtendedKernel(w[:, :, None].copy(), b.copy()))
    if pos != theta.size:
        raise ContractError(f"flat vector has {theta.size} entries, expected {pos}")
    return ModelParams(layers)


def flat_grad(grads: GradientSet) -> np.ndarray:
    """Flattened gradient w.r.t. the aggregated kernels and biases."""
    parts = []
    for g, b in zip(grads.kernel_grads, grads.biases):
        parts.append(g.ravel())
        parts.append(b)
    return np.concatenate(parts)


def collapsed_loss_and_grad(params: ModelParams, batch, labels) -> tuple:
    """Loss and flat gradient of the collapsed (base-size) network."""
    base = params.collapsed() if params.expansion > 1 else params
    loss, grads = loss_and_grad(base, None, batch, labels)
    return loss, flat_grad(grads)


def central_difference_hvp(grad_fn, theta, v) -> np.ndarray:
    """(grad(theta + h v) - grad(theta - h v)) / 2h with h = 1e-4 / ||v||."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros_like(v)
    h = 1e-4 / norm
    theta = np.asarray(theta, dtype=np.float64)
    return (grad_fn(theta + h * v) - grad_fn(theta - h * v)) / (2.0 * h)


def hessian_vector_product(params: ModelParams, batch, labels, v) -> np.ndarray:
    """Hessian of the collapsed network's batch loss applied to ``v``."""
    base = params.collapsed() if params.expansion > 1 else params
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (base.num_collapsed_params(),):
        raise ContractError(
            f"direction has shape {v.shape}, expected ({base.num_collapsed_params()},)"
        )

    def grad_fn(theta):
        _, g = collapsed_loss_and_grad(unflatten(theta, base), batch, labels)
        return g

    return central_difference_hvp(grad_fn, flatten(base), v)
