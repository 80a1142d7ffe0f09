import numpy as np
import pytest

from adbank.errors import ContractViolationError
from adbank.numcore import (
    RandomStream,
    bilinear_upsample,
    gaussian_blur,
    gaussian_kernel_1d,
    gaussian_of,
    matmul,
)


def naive_matmul(a, b):
    """Independent triple-loop oracle."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def dense_blur(m, sigma):
    """Direct 2-D kernel convolution oracle with the same reflective padding."""
    k1 = gaussian_kernel_1d(sigma)
    kernel2d = np.outer(k1, k1)
    radius = len(k1) // 2
    padded = np.pad(m, radius, mode="symmetric")
    out = np.zeros_like(m)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            window = padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1]
            out[i, j] = float(np.sum(window * kernel2d))
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.RandomState(0)
        m = rng.randn(3, 5)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_case(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[3.0], [7.0]]))

    def test_matches_naive_oracle(self):
        rng = np.random.RandomState(1)
        a = rng.randn(5, 4)
        b = rng.randn(4, 3)
        assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_associativity(self):
        rng = np.random.RandomState(2)
        for _ in range(20):
            a, b, c = rng.randn(4, 6), rng.randn(6, 3), rng.randn(3, 5)
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            scale = np.abs(left).max() + 1e-30
            assert np.abs(left - right).max() / scale < 1e-9

    def test_dim_mismatch(self):
        with pytest.raises(ContractViolationError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        bad = np.array([[np.nan, 0.0]])
        with pytest.raises(ContractViolationError):
            matmul(bad, np.zeros((2, 1)))


class TestRandomStream:
    def test_gaussian_statistics(self):
        draws = gaussian_of(RandomStream(7), 100_000, 1.0)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.std() - 1.0) < 0.02

    def test_same_seed_identical(self):
        a = gaussian_of(RandomStream(123), 500, 0.7)
        b = gaussian_of(RandomStream(123), 500, 0.7)
        assert np.array_equal(a, b)

    def test_sigma_scaling_exact(self):
        base = gaussian_of(RandomStream(9), 200, 1.0)
        doubled = gaussian_of(RandomStream(9), 200, 2.0)
        assert np.array_equal(doubled, 2.0 * base)

    def test_sigma_nonpositive_rejected(self):
        with pytest.raises(ContractViolationError):
            gaussian_of(RandomStream(1), 4, 0.0)
        with pytest.raises(ContractViolationError):
            gaussian_of(RandomStream(1), 4, -1.0)

    def test_uniform_range_and_cost(self):
        stream = RandomStream(5)
        u = stream.uniform(10_000)
        assert stream.counter == 10_000  # one raw output per uniform
        assert (u >= 0).all() and (u < 1).all()

    def test_gaussian_cost(self):
        stream = RandomStream(5)
        stream.gaussian(100, 1.0)
        assert stream.counter == 200  # two raw outputs per gaussian

    def test_substreams_disjoint_first_2pow20(self):
        n = 1 << 20
        parent = RandomStream(42)
        a = parent.child("alpha").raw(n)
        b = parent.child("beta").raw(n)
        assert len(np.intersect1d(a, b)) == 0

    def test_permutation_is_permutation(self):
        perm = RandomStream(3).permutation(50)
        assert sorted(perm.tolist()) == list(range(50))


class TestBilinearUpsample:
    def test_constant_preserved(self):
        m = np.full((2, 3), 0.3)
        out = bilinear_upsample(m, 7, 9)
        assert np.abs(out - 0.3).max() < 1e-12

    def test_closed_form_2x2(self):
        m = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = bilinear_upsample(m, 4, 4)
        expected_cols = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        for row in out:
            assert np.abs(row - expected_cols).max() < 1e-12

    def test_identity_same_size(self):
        rng = np.random.RandomState(4)
        m = rng.rand(5, 6)
        assert np.array_equal(bilinear_upsample(m, 5, 6), m)

    def test_zero_output_dims_rejected(self):
        with pytest.raises(ContractViolationError):
            bilinear_upsample(np.ones((2, 2)), 0, 4)

    def test_downsample_rejected(self):
        with pytest.raises(ContractViolationError):
            bilinear_upsample(np.ones((4, 4)), 2, 8)


class TestGaussianBlur:
    def test_sigma_zero_identity(self):
        rng = np.random.RandomState(5)
        m = rng.rand(4, 6)
        assert np.array_equal(gaussian_blur(m, 0.0), m)

    def test_constant_unchanged(self):
        out = gaussian_blur(np.full((5, 5), 2.5), 1.7)
        assert np.abs(out - 2.5).max() < 1e-12

    def test_impulse_matches_dense_oracle(self):
        m = np.zeros((9, 9))
        m[4, 4] = 1.0
        assert np.abs(gaussian_blur(m, 1.0) - dense_blur(m, 1.0)).max() < 1e-12

    def test_random_map_matches_dense_oracle(self):
        rng = np.random.RandomState(6)
        m = rng.rand(7, 5)
        assert np.abs(gaussian_blur(m, 1.5) - dense_blur(m, 1.5)).max() < 1e-12

    def test_sum_preserved(self):
        rng = np.random.RandomState(7)
        for shape, sigma in [((6, 6), 1.0), ((3, 8), 2.5), ((1, 1), 4.0), ((2, 9), 0.4)]:
            m = rng.rand(*shape)
            out = gaussian_blur(m, sigma)
            assert abs(out.sum() - m.sum()) / abs(m.sum()) < 1e-9

    def test_negative_sigma_rejected(self):
        with pytest.raises(ContractViolationError):
            gaussian_blur(np.ones((3, 3)), -0.1)
