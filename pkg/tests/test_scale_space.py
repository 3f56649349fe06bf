import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asfneck.errors import DimensionError
from asfneck.scale_space import (
    GaussianSpec,
    build_scale_stack,
    gaussian_2d,
    gaussian_blur,
    gaussian_kernel_1d,
    gaussian_kernel_2d,
)
from oracles import gaussian_kernel_2d as kernel_oracle


def checkerboard(n=32, cell=2):
    yy, xx = np.indices((n, n))
    return (((yy // cell) + (xx // cell)) % 2).astype(np.float32)[None, None]


class TestSpec:
    def test_default_radius(self):
        assert GaussianSpec(1.0).radius == 3
        assert GaussianSpec(0.2).radius == 1
        assert GaussianSpec(2.5).radius == 8

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            GaussianSpec(sigma)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            GaussianSpec(1.0, radius=0)


class TestKernel:
    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.1, 10.0))
    def test_normalized_and_symmetric(self, sigma):
        k = gaussian_kernel_1d(GaussianSpec(sigma))
        assert abs(k.sum() - 1.0) < 1e-9
        np.testing.assert_array_equal(k, k[::-1])

    def test_2d_matches_oracle(self):
        np.testing.assert_allclose(gaussian_kernel_2d(GaussianSpec(1.0)), kernel_oracle(1.0, 3), atol=1e-7)

    def test_continuous_peak(self):
        for sigma in (0.5, 1.0, 3.0):
            assert gaussian_2d(0.0, 0.0, sigma) == pytest.approx(1.0 / (2 * math.pi * sigma ** 2))


class TestBlur:
    def test_constant_preserved(self):
        img = np.full((1, 2, 17, 23), 0.37, np.float32)
        for sigma in (0.5, 1.0, 4.0, 12.0):
            np.testing.assert_allclose(gaussian_blur(img, GaussianSpec(sigma)), 0.37, atol=1e-6)

    def test_impulse_response_is_kernel(self):
        img = np.zeros((1, 1, 15, 15), np.float32)
        img[0, 0, 7, 7] = 1.0
        out = gaussian_blur(img, GaussianSpec(1.0, radius=3))
        k = gaussian_kernel_2d(GaussianSpec(1.0, radius=3))
        np.testing.assert_allclose(out[0, 0, 4:11, 4:11], k, atol=1e-9)
        assert np.all(out[0, 0, :4] == 0)

    def test_shape_preserved(self):
        img = np.random.default_rng(0).random((2, 3, 9, 14)).astype(np.float32)
        assert gaussian_blur(img, GaussianSpec(2.0)).shape == img.shape

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.3, 3.0))
    def test_commutes_with_constant_shift(self, c, sigma):
        img = np.random.default_rng(1).random((1, 1, 12, 12)).astype(np.float32)
        spec = GaussianSpec(sigma)
        lhs = gaussian_blur(img + np.float32(c), spec).astype(np.float64)
        rhs = gaussian_blur(img, spec).astype(np.float64) + c
        np.testing.assert_allclose(lhs, rhs, atol=2e-6)

    def test_rank_check(self):
        with pytest.raises(DimensionError):
            gaussian_blur(np.zeros((4, 4), np.float32), GaussianSpec(1.0))

    def test_separable_equals_full_2d_interior(self):
        rng = np.random.default_rng(2)
        img = rng.random((1, 1, 20, 20))
        out = gaussian_blur(img.astype(np.float32), GaussianSpec(1.5))
        k = kernel_oracle(1.5, 5)
        i, j = 10, 9
        ref = (img[0, 0, i - 5:i + 6, j - 5:j + 6] * k).sum()
        assert out[0, 0, i, j] == pytest.approx(ref, abs=1e-6)


class TestStack:
    def test_tiny_sigma_is_identity(self):
        img = np.random.default_rng(0).random((1, 1, 8, 8)).astype(np.float32)
        stack = build_scale_stack(img, [1e-9])
        assert len(stack) == 1
        np.testing.assert_array_equal(stack.levels[0], img)

    def test_mean_preserved_interior_dominated(self):
        img = np.zeros((1, 1, 128, 128), np.float32)
        img[0, 0, 40:90, 30:100] = np.random.default_rng(3).random((50, 70))
        stack = build_scale_stack(img, [0.5, 1.0, 2.0, 4.0])
        for level in stack.levels:
            assert abs(level.astype(np.float64).mean() - img.astype(np.float64).mean()) < 1e-5

    def test_variance_non_increasing(self):
        stack = build_scale_stack(checkerboard(), [0.5, 1.0, 2.0, 4.0, 8.0])
        var = [float(level.astype(np.float64).var()) for level in stack.levels]
        assert all(b <= a for a, b in zip(var, var[1:]))

    def test_levels_share_shape(self):
        img = np.random.default_rng(4).random((1, 3, 10, 12)).astype(np.float32)
        stack = build_scale_stack(img, [1, 2, 3])
        assert all(level.shape == img.shape for level in stack.levels)
        assert stack.sigmas == [1.0, 2.0, 3.0]

    @pytest.mark.parametrize("sigmas", [[], [2.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
    def test_bad_sigmas(self, sigmas):
        with pytest.raises(ValueError):
            build_scale_stack(np.zeros((1, 1, 4, 4), np.float32), sigmas)
