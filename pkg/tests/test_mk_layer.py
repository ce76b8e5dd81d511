import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from majority_kernels import mk_layer, numeric
from majority_kernels.mk_layer import (
    ExtendedKernel,
    aggregate,
    collapse,
    expand_from,
    init_extended,
    is_on_simplex,
    perturbation_by_slices,
    perturbation_of,
    sample_probability_tensor,
)
from majority_kernels.numeric import ContractError, RngStream


def test_kernel_validates_shapes():
    with pytest.raises(ContractError):
        ExtendedKernel(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ContractError):
        ExtendedKernel(np.zeros((2, 3, 2)), np.zeros(2))


def test_aggregate_matches_einsum(rng):
    k = init_extended(rng, 4, 5, 3)
    p = sample_probability_tensor(rng, 4, 5, 3)
    np.testing.assert_allclose(aggregate(k, p), np.einsum("ijk,ijk->ij", k.weights, p), atol=1e-14)


def test_collapse_is_slice_mean(rng):
    k = init_extended(rng, 4, 5, 3)
    np.testing.assert_allclose(collapse(k), k.weights.mean(axis=2), atol=1e-15)


def test_uniform_p_aggregates_to_collapse(rng):
    k = init_extended(rng, 3, 4, 3)
    p = mk_layer.uniform_probability_tensor(3, 4, 3)
    np.testing.assert_allclose(aggregate(k, p), collapse(k), atol=1e-15)


def test_equal_slices_are_exact(rng):
    base = rng.normal((3, 4))
    k = expand_from(base, 4, 0.0, rng)
    p = sample_probability_tensor(rng, 3, 4, 4)
    assert np.array_equal(aggregate(k, p), base)
    assert np.array_equal(collapse(k), base)


def test_single_slice_is_identity(rng):
    k = init_extended(rng, 3, 2, 1)
    p = sample_probability_tensor(rng, 3, 2, 1)
    assert np.array_equal(p, np.ones((3, 2, 1)))
    assert np.array_equal(aggregate(k, p), k.weights[:, :, 0])


def test_probability_shape_mismatch(rng):
    k = init_extended(rng, 3, 4, 2)
    with pytest.raises(ContractError, match="probability shape"):
        aggregate(k, np.full((3, 4, 3), 1 / 3))


def test_perturbation_two_forms_agree(rng):
    k = init_extended(rng, 5, 3, 3)
    p = sample_probability_tensor(rng, 5, 3, 3)
    np.testing.assert_allclose(perturbation_of(k, p), perturbation_by_slices(k, p), atol=1e-14)


def test_dirichlet_moments():
    # Dirichlet(1,...,1): mean 1/e, variance (e - 1) / (e^2 (e + 1))
    e = 3
    p = sample_probability_tensor(RngStream(9), 200, 100, e).reshape(-1, e)
    n = p.shape[0]
    var = (e - 1) / (e**2 * (e + 1))
    assert np.all(np.abs(p.mean(axis=0) - 1 / e) < 5 * np.sqrt(var / n))
    assert np.all(np.abs(p.var(axis=0) - var) < 0.02 * var)


def test_init_scale():
    k = init_extended(RngStream(0), 400, 300, 2)
    assert abs(k.weights.std() - np.sqrt(2 / 400)) < 0.01 * np.sqrt(2 / 400)
    assert np.all(k.bias == 0)
    assert not np.array_equal(k.weights[:, :, 0], k.weights[:, :, 1])


def test_expand_from_noise(rng):
    base = rng.normal((3, 4))
    k = expand_from(base, 3, 0.01, rng, bias=np.ones(4))
    assert k.e == 3
    assert np.abs(collapse(k) - base).max() < 0.05
    assert np.array_equal(k.bias, np.ones(4))
    with pytest.raises(ContractError):
        expand_from(base, 0, 0.0, rng)
    with pytest.raises(ContractError):
        expand_from(base, 2, -1.0, rng)


@pytest.mark.parametrize("name", sorted(numeric.backends()))
def test_backend_aggregate_collapse(name, rng):
    impl = numeric.backends()[name]
    w = rng.normal((4, 3, 2))
    p = sample_probability_tensor(rng, 4, 3, 2)
    np.testing.assert_allclose(impl.aggregate(w, p), np.einsum("ijk,ijk->ij", w, p), atol=1e-14)
    np.testing.assert_allclose(impl.collapse(w), w.mean(axis=2), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32))
def test_simplex_and_backend_equality(n, m, e, seed):
    r = RngStream(seed)
    p = sample_probability_tensor(r, n, m, e)
    assert is_on_simplex(p)
    w = r.normal((n, m, e))
    backends = list(numeric.backends().values())
    for impl in backends[1:]:
        assert np.array_equal(impl.aggregate(w, p), backends[0].aggregate(w, p))
        assert np.array_equal(impl.collapse(w), backends[0].collapse(w))
