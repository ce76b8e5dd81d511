import numpy as np
import pytest

from majority_kernels.model import GradientSet, NetworkSpec, init_params
from majority_kernels.numeric import ContractError, RngStream
from majority_kernels.optimizers import SGD, Adam, grid_rates, make_optimizer


def test_grid_rates():
    adam = grid_rates("adam")
    assert len(adam) == 10
    assert adam[4] == 0.001
    np.testing.assert_allclose(adam[0], 0.001 / 1.5**4)
    np.testing.assert_allclose(adam[-1], 0.001 * 1.5**5)
    assert grid_rates("sgd")[4] == 0.025
    with pytest.raises(ContractError):
        grid_rates("rmsprop")


def _toy():
    params = init_params(NetworkSpec(2, (3,), 2, 2), RngStream(0))
    grads = GradientSet([np.ones(l.shape) for l in params.layers],
                        [np.full(l.m, 2.0) for l in params.layers], [])
    return params, grads


def test_sgd_step():
    params, grads = _toy()
    before = params.copy()
    SGD(0.1, bias_learning_rate=0.5).step(params, grads)
    for a, b in zip(params.layers, before.layers):
        np.testing.assert_allclose(a.weights, b.weights - 0.1)
        np.testing.assert_allclose(a.bias, b.bias - 1.0)


def test_adam_matches_reference():
    w = np.array([0.5, -1.0])
    g_seq = [np.array([0.2, -0.4]), np.array([0.1, 0.3]), np.array([-0.5, 0.0])]
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    ref = w.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    opt = Adam(lr)
    param = w.copy()
    for g in g_seq:
        opt.apply([("p", param, g, None)])
    np.testing.assert_allclose(param, ref, rtol=1e-14)


def test_indexed_update_touches_only_slice():
    param = np.zeros((4, 3))
    idx = np.ix_([0, 2], [1])
    SGD(1.0).apply([("layer0.weight", param, np.ones((2, 1)), idx)])
    assert param.sum() == -2.0
    assert param[0, 1] == param[2, 1] == -1.0


def test_nonfinite_gradient_names_entry():
    param = np.zeros(3)
    with pytest.raises(FloatingPointError, match=r"layer1.bias at entry \(2,\)"):
        SGD(0.1).apply([("layer1.bias", param, np.array([0.0, 1.0, np.nan]), None)])
    assert np.all(param == 0.0)


def test_bad_rate_and_kind():
    with pytest.raises(ContractError):
        SGD(0.0)
    with pytest.raises(ContractError):
        make_optimizer("lbfgs", 0.1)
