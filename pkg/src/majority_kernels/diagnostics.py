"""Numerical checks of the MK theory: modified-loss terms, stochastic
sharpness, perturbation statistics and the uniform-probability fallback."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import mk_layer
from .data import make_blobs
from .model import (
    ModelParams,
    NetworkSpec,
    central_difference_hvp,
    collapsed_loss_and_grad,
    cross_entropy,
    flatten,
    forward,
    init_params,
    loss_and_grad,
    unflatten,
)
from .numeric import ContractError, RngStream
from .optimizers import SGD


@dataclass
class BeaReport:
    learning_rate: float
    base_loss: float
    grad_norm_sq: float
    perturbed_grad_norm_sq: float
    linear_term: float
    modified_loss: float
    perturbation_norm: float

    def to_dict(self) -> dict:
        return asdict(self)

    def reassembled(self) -> float:
        return self.base_loss + self.learning_rate / 4.0 * self.perturbed_grad_norm_sq + self.linear_term


def bea_from_functions(loss_fn, grad_fn, theta, eps, lr: float) -> BeaReport:
    """Modified-loss terms for any differentiable loss given as callables.

    L~ = L + (lr/4) * ||grad + H eps||^2 + grad . eps, with ``H eps`` by
    central differences of ``grad_fn``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    base = float(loss_fn(theta))
    grad = np.asarray(grad_fn(theta))
    h_eps = central_difference_hvp(grad_fn, theta, eps)
    perturbed = grad + h_eps
    grad_norm_sq = float(grad @ grad)
    perturbed_norm_sq = float(perturbed @ perturbed)
    linear = float(grad @ eps)
    modified = base + lr / 4.0 * perturbed_norm_sq + linear
    return BeaReport(lr, base, grad_norm_sq, perturbed_norm_sq, linear, modified,
                     float(np.linalg.norm(eps)))


def flat_perturbation(params: ModelParams, probs) -> np.ndarray:
    """Per-layer kernel perturbations, flattened like :func:`model.flatten` (biases get 0)."""
    parts = []
    for layer, p in zip(params.layers, probs):
        eps = np.zeros((layer.n, layer.m)) if p is None else mk_layer.perturbation_of(layer, p)
        parts.append(eps.ravel())
        parts.append(np.zeros(layer.m))
    return np.concatenate(parts)


def bea_terms(params: ModelParams, batch, labels, probs, lr: float) -> BeaReport:
    """Modified-loss terms at the collapsed parameters, with the perturbation
    induced by the sampled probabilities ``probs``."""
    base = params.collapsed()
    eps = flat_perturbation(params, probs)

    def loss_fn(theta):
        logits, _ = forward(unflatten(theta, base), None, batch)
        return cross_entropy(logits, labels)

    def grad_fn(theta):
        return collapsed_loss_and_grad(unflatten(theta, base), batch, labels)[1]

    return bea_from_functions(loss_fn, grad_fn, flatten(base), eps, lr)


@dataclass
class SharpnessReport:
    mc_samples: int
    mean_perturbed_loss: float
    collapsed_loss: float
    delta: float
    std_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def sharpness_delta(params: ModelParams, x, labels, mc_samples: int, rng: RngStream) -> SharpnessReport:
    """|E_p[L(stochastic params)] - L(collapsed params)| by Monte Carlo."""
    if mc_samples < 2:
        raise ContractError("sharpness_delta needs mc_samples >= 2")
    collapsed_loss = cross_entropy(forward(params, None, x)[0], labels)
    losses = np.empty(mc_samples)
    for s in range(mc_samples):
        probs = [mk_layer.sample_probability_tensor(rng, l.n, l.m, l.e) for l in params.layers]
        losses[s] = cross_entropy(forward(params, probs, x)[0], labels)
    mean = float(losses.mean())
    return SharpnessReport(
        mc_samples, mean, collapsed_loss, abs(mean - collapsed_loss),
        float(losses.std(ddof=1) / np.sqrt(mc_samples)),
    )


def perturbation_stats(kernels, mc_samples: int, rng: RngStream) -> list:
    """Per-entry empirical mean and variance of the perturbation, one (mean, var) per kernel."""
    if mc_samples < 100:
        raise ContractError("perturbation_stats needs mc_samples >= 100")
    out = []
    for kernel in kernels:
        total = np.zeros((kernel.n, kernel.m))
        total_sq = np.zeros((kernel.n, kernel.m))
        for _ in range(mc_samples):
            p = mk_layer.sample_probability_tensor(rng, kernel.n, kernel.m, kernel.e)
            eps = mk_layer.perturbation_of(kernel, p)
            total += eps
            total_sq += eps * eps
        mean = total / mc_samples
        var = np.maximum(total_sq / mc_samples - mean * mean, 0.0) * mc_samples / (mc_samples - 1)
        out.append((mean, var))
    return out


def verify_uniform_fallback(
    spec: NetworkSpec,
    lr: float,
    steps: int,
    seed: int,
    optimizer: str = "sgd",
    data=None,
    batch_size: int = 256,
) -> float:
    """Max |collapsed MK weights - vanilla weights| over a lockstep run.

    MK runs with p fixed at 1/e and kernel rate ``lr``; the vanilla network
    starts from the collapsed MK weights and uses kernel rate ``lr / e``.
    Biases are not expanded, so both runs move them at ``lr``.
    """
    if optimizer != "sgd":
        raise ContractError("the uniform-fallback identity only holds for plain SGD")
    rng = RngStream(seed)
    if data is None:
        data = make_blobs(rng.child("data"), max(spec.output_dim, 2), 64, spec.input_dim, 6.0)
    mk_params = init_params(spec, rng.child("init"))
    vanilla = mk_params.collapsed()
    e = spec.expansion
    mk_opt = SGD(lr)
    van_opt = SGD(lr / e, bias_learning_rate=lr)
    order = rng.child("batches")
    worst = 0.0
    for _ in range(steps):
        idx = order.integers(0, len(data), batch_size)
        x, y = data.features[idx], data.labels[idx]
        _, g_mk = loss_and_grad(mk_params, None, x, y)
        _, g_van = loss_and_grad(vanilla, None, x, y)
        mk_opt.step(mk_params, g_mk)
        van_opt.step(vanilla, g_van)
        worst = max(worst, _max_deviation(mk_params.collapsed(), vanilla))
    return worst


def _max_deviation(a: ModelParams, b: ModelParams) -> float:
    dev = 0.0
    for la, lb in zip(a.layers, b.layers):
        dev = max(dev, float(np.abs(la.weights - lb.weights).max()), float(np.abs(la.bias - lb.bias).max()))
    return dev
