import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macroblock_dropout.tensor import (
    Rng,
    add,
    bernoulli,
    elementwise_mul,
    matmul,
    ones,
    sigmoid,
    sub,
    sum_all,
    tensor,
    transpose,
    zeros,
)


class TestConstruction:
    def test_flat_data_with_shape(self):
        t = tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
        assert t.shape == (2, 3)
        assert t.dtype == np.float64
        assert t[1, 0] == 4.0

    def test_size_mismatch(self):
        with pytest.raises(ValueError, match=r"\(2, 2\)"):
            tensor([1, 2, 3], shape=(2, 2))

    def test_rank_limit(self):
        with pytest.raises(ValueError, match="rank 4"):
            tensor(np.zeros((1, 1, 1, 1)))


class TestElementwise:
    def test_identity_and_zero_mask(self):
        out = elementwise_mul(tensor([[1, 2], [3, 4]]), tensor([[1, 0], [0, 1]]))
        np.testing.assert_array_equal(out, [[1, 0], [0, 4]])

    def test_ones_is_identity(self):
        x = Rng(3).normal((4, 5))
        np.testing.assert_array_equal(elementwise_mul(x, ones(4, 5)), x)

    def test_signed_values(self):
        np.testing.assert_array_equal(elementwise_mul(tensor([[2, -3]]), tensor([[-1, 2]])), [[-2, -6]])

    @pytest.mark.parametrize("op", [elementwise_mul, add, sub])
    def test_shape_mismatch_names_both_shapes(self, op):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
            op(zeros(2, 3), zeros(3, 2))

    def test_add_sub(self):
        a, b = tensor([[1, 2]]), tensor([[3, 5]])
        np.testing.assert_array_equal(add(a, b), [[4, 7]])
        np.testing.assert_array_equal(sub(a, b), [[-2, -3]])


class TestSum:
    def test_zero(self):
        assert sum_all(zeros(3, 3)) == 0.0

    def test_small(self):
        assert sum_all(tensor([[1, 2], [3, 4]])) == 10.0

    def test_symmetric(self):
        assert sum_all(tensor([[-5, 5]])) == 0.0

    def test_empty(self):
        assert sum_all(np.zeros((0, 3))) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_hadamard_sum_matches_loop(self, r, c, seed):
        rng = Rng(seed)
        a, b = rng.normal((r, c)), rng.normal((r, c))
        brute = 0.0
        for i in range(r):
            for j in range(c):
                brute += a[i, j] * b[i, j]
        got = sum_all(elementwise_mul(a, b))
        assert abs(got - brute) <= 1e-12 * max(1.0, np.sum(np.abs(a * b)))


class TestMatmul:
    def test_against_triple_loop(self):
        for seed in range(5):
            rng = Rng(seed)
            a, b = rng.normal((7, 5)), rng.normal((5, 3))
            want = np.zeros((7, 3))
            for i in range(7):
                for j in range(3):
                    for k in range(5):
                        want[i, j] += a[i, k] * b[k, j]
            np.testing.assert_allclose(matmul(a, b), want, rtol=1e-10, atol=1e-12)

    def test_inner_mismatch(self):
        with pytest.raises(ValueError, match="inner"):
            matmul(zeros(2, 3), zeros(2, 3))

    def test_transpose(self):
        np.testing.assert_array_equal(transpose(tensor([[1, 2, 3]])), [[1], [2], [3]])


def test_sigmoid_matches_logistic_and_stays_finite():
    x = np.linspace(-30, 30, 121)
    np.testing.assert_allclose(sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12, atol=1e-300)
    assert np.all(np.isfinite(sigmoid(np.array([-1e4, 1e4]))))


class TestBernoulli:
    def test_degenerate_probabilities(self):
        rng = Rng(0)
        assert np.all(bernoulli(rng, (50, 50), 1.0) == 1.0)
        assert np.all(bernoulli(rng, (50, 50), 0.0) == 0.0)

    def test_values_are_binary(self):
        m = bernoulli(Rng(1), (100,), 0.5)
        assert set(np.unique(m)) <= {0.0, 1.0}

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_rejects_bad_probability(self, p):
        with pytest.raises(ValueError):
            bernoulli(Rng(0), (2,), p)

    def test_monte_carlo_mean(self):
        # 3 sigma with sigma = sqrt(0.8 * 0.2 / 1e6) = 4e-4
        m = bernoulli(Rng(11), (10**6,), 0.8)
        assert abs(m.mean() - 0.8) <= 0.002

    def test_reproducible(self):
        a = bernoulli(Rng(123), (8, 16), 0.3)
        b = bernoulli(Rng(123), (8, 16), 0.3)
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, bernoulli(Rng(124), (8, 16), 0.3))

    def test_spawned_streams_are_deterministic_and_distinct(self):
        a1, a2 = Rng(5).spawn(2)
        b1, _ = Rng(5).spawn(2)
        assert np.array_equal(a1.random(10), b1.random(10))
        assert not np.array_equal(Rng(5).spawn(2)[0].random(10), a2.random(10))
