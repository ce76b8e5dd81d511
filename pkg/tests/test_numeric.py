import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from majority_kernels import numeric
from majority_kernels.numeric import ContractError, RngStream, matmul, sample_exponential


def test_matmul_matches_numpy(rng):
    a = rng.normal((7, 5))
    b = rng.normal((5, 3))
    np.testing.assert_allclose(matmul(a, b), a @ b, rtol=1e-13, atol=1e-13)


def test_matmul_fixed_order_against_python_loop(rng):
    a = rng.normal((3, 6))
    b = rng.normal((6, 2))
    expect = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            acc = 0.0
            for k in range(6):
                acc += a[i, k] * b[k, j]
            expect[i, j] = acc
    assert np.array_equal(matmul(a, b), expect)


def test_matmul_shape_mismatch():
    with pytest.raises(ContractError, match="mismatch"):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_rejects_vectors():
    with pytest.raises(ContractError):
        matmul(np.ones(3), np.ones((3, 2)))


@pytest.mark.parametrize("name", sorted(numeric.backends()))
def test_each_backend_matmul(name, rng):
    impl = numeric.backends()[name]
    a = rng.normal((9, 4))
    a[a < 0] = 0.0  # exercise the zero-skip path
    b = rng.normal((4, 5))
    np.testing.assert_allclose(impl.matmul(a, b), a @ b, rtol=1e-13, atol=1e-13)


def test_rng_replays_and_children_differ():
    a = RngStream(5).child("init").normal(10)
    b = RngStream(5).child("init").normal(10)
    c = RngStream(5).child("probs").normal(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, RngStream(6).child("init").normal(10))


def test_rng_child_does_not_consume_parent():
    s = RngStream(3)
    first = RngStream(3).uniform(4)
    s.child("x").uniform(100)
    assert np.array_equal(s.uniform(4), first)


def test_derive_seed_is_stable_and_63_bit():
    s = RngStream(11).derive_seed("member0")
    assert s == RngStream(11).derive_seed("member0")
    assert 0 <= s < 2**63
    assert s != RngStream(11).derive_seed("member1")


def test_negative_seed_rejected():
    with pytest.raises(ContractError):
        RngStream(-1)


def test_sample_exponential_count():
    with pytest.raises(ContractError):
        sample_exponential(RngStream(0), 0)
    draws = sample_exponential(RngStream(0), 50_000)
    assert draws.min() > 0.0
    assert abs(draws.mean() - 1.0) < 4 / np.sqrt(50_000)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_backends_bit_identical(n, k, m, seed):
    r = RngStream(seed)
    a, b = r.normal((n, k)), r.normal((k, m))
    results = [impl.matmul(a, b) for impl in numeric.backends().values()]
    for res in results[1:]:
        assert np.array_equal(res, results[0])
