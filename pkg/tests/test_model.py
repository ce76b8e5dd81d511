import numpy as np
import pytest

from majority_kernels import model
from majority_kernels.mk_layer import sample_probability_tensor
from majority_kernels.model import (
    ModelParams,
    NetworkSpec,
    cross_entropy,
    flatten,
    forward,
    hessian_vector_product,
    init_params,
    loss_and_grad,
    params_from_matrices,
    unflatten,
)
from majority_kernels.numeric import ContractError, RngStream


def numeric_slice_grad(params, probs, x, y, h=1e-6):
    out = []
    for layer in params.layers:
        g = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            orig = layer.weights[idx]
            layer.weights[idx] = orig + h
            up = cross_entropy(forward(params, probs, x)[0], y)
            layer.weights[idx] = orig - h
            down = cross_entropy(forward(params, probs, x)[0], y)
            layer.weights[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_topologies():
    assert model.TOPOLOGIES == {"A1": (100,), "A2": (200, 100), "A3": (400, 200, 100)}
    spec = NetworkSpec(3072, model.TOPOLOGIES["A2"], 10, 3)
    assert spec.layer_dims == [(3072, 200), (200, 100), (100, 10)]
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_spec_validation():
    with pytest.raises(ContractError):
        NetworkSpec(0, (4,), 2, 1)
    with pytest.raises(ContractError):
        NetworkSpec(3, (4,), 2, 0)


@pytest.mark.parametrize("e", [1, 2, 3])
def test_backward_matches_finite_differences(e):
    rng = RngStream(e)
    params = init_params(NetworkSpec(3, (4,), 3, e), rng.child("init"))
    x = rng.normal((5, 3))
    y = np.array([0, 1, 2, 1, 0])
    probs = [sample_probability_tensor(rng, l.n, l.m, l.e) for l in params.layers]
    _, grads = loss_and_grad(params, probs, x, y)
    for got, want in zip(grads.weights, numeric_slice_grad(params, probs, x, y)):
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


def test_bias_gradient(rng):
    params = init_params(NetworkSpec(3, (4,), 2, 2), rng)
    x = rng.normal((6, 3))
    y = np.array([0, 1, 1, 0, 1, 0])
    _, grads = loss_and_grad(params, None, x, y)
    h = 1e-6
    for layer, gb in zip(params.layers, grads.biases):
        for j in range(layer.m):
            layer.bias[j] += h
            up = cross_entropy(forward(params, None, x)[0], y)
            layer.bias[j] -= 2 * h
            down = cross_entropy(forward(params, None, x)[0], y)
            layer.bias[j] += h
            assert abs(gb[j] - (up - down) / (2 * h)) < 1e-7


def test_uniform_probs_equal_collapsed_forward(rng):
    params = init_params(NetworkSpec(4, (5, 3), 2, 3), rng)
    x = rng.normal((4, 4))
    uniform = [np.full(l.shape, 1 / 3) for l in params.layers]
    np.testing.assert_allclose(forward(params, uniform, x)[0], forward(params, None, x)[0], atol=1e-13)
    np.testing.assert_allclose(forward(params, None, x)[0], forward(params.collapsed(), None, x)[0],
                               atol=1e-13)


def test_forward_rejects_bad_batch(rng):
    params = init_params(NetworkSpec(4, (5,), 2, 1), rng)
    with pytest.raises(ContractError, match="input dim"):
        forward(params, None, np.zeros((2, 3)))


def test_cross_entropy_label_check():
    with pytest.raises(ContractError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_flatten_roundtrip(rng):
    params = init_params(NetworkSpec(3, (4,), 2, 1), rng)
    theta = flatten(params)
    assert theta.size == params.num_collapsed_params() == 3 * 4 + 4 + 4 * 2 + 2
    back = unflatten(theta, params)
    assert np.array_equal(flatten(back), theta)
    with pytest.raises(ContractError):
        unflatten(theta[:-1], params)


def test_hvp_matches_softmax_regression_hessian(rng):
    # single linear layer: H = mean_b (x x^T) kron (diag(s) - s s^T), plus bias rows
    n, k, b = 3, 4, 6
    w = rng.normal((n, k))
    bias = rng.normal(k)
    params = params_from_matrices([w], [bias])
    x = rng.normal((b, n))
    y = np.array([0, 1, 2, 3, 0, 1])
    s = model.softmax(x @ w + bias)
    xa = np.hstack([x, np.ones((b, 1))])  # bias acts like a constant input
    h_full = np.zeros(((n + 1) * k, (n + 1) * k))
    for r in range(b):
        h_full += np.kron(np.outer(xa[r], xa[r]), np.diag(s[r]) - np.outer(s[r], s[r]))
    h_full /= b
    v = rng.normal(n * k + k)
    # flatten order is [W row-major, bias], which matches the kron layout above
    np.testing.assert_allclose(hessian_vector_product(params, x, y, v), h_full @ v, rtol=1e-6, atol=1e-8)


def test_hvp_symmetry(rng):
    params = init_params(NetworkSpec(3, (5,), 3, 2), rng)
    x = rng.normal((8, 3))
    y = rng.integers(0, 3, 8)
    u = rng.normal(params.num_collapsed_params())
    v = rng.normal(params.num_collapsed_params())
    hu = hessian_vector_product(params, x, y, u)
    hv = hessian_vector_product(params, x, y, v)
    assert abs(v @ hu - u @ hv) < 1e-6 * max(1.0, abs(v @ hu))


def test_hvp_shape_check(rng):
    params = init_params(NetworkSpec(3, (5,), 3, 1), rng)
    with pytest.raises(ContractError):
        hessian_vector_product(params, np.zeros((1, 3)), np.array([0]), np.zeros(3))


def test_params_chain_validation():
    from majority_kernels.mk_layer import ExtendedKernel

    with pytest.raises(ContractError):
        ModelParams([ExtendedKernel(np.zeros((3, 4, 1)), np.zeros(4)),
                     ExtendedKernel(np.zeros((5, 2, 1)), np.zeros(2))])
