import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asfneck.errors import DimensionError
from asfneck.tensor import (
    BatchNormParams,
    ConvSpec,
    activate,
    add,
    batch_norm_infer,
    concat,
    conv_output_extent,
    convolve,
    global_avg_pool,
    ordered_mean,
    pool,
    squeeze,
    tensor,
    unsqueeze,
    upsample_nearest,
)

Q = np.array([[[[1, 2], [3, 4]]]], dtype=np.float32)
finite = st.floats(-10, 10, width=32, allow_nan=False, allow_infinity=False)


def naive_conv2d(x, w, b, stride, pad):
    """Direct loop cross-correlation in float64."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[bi, oc, i, j] = (patch * w[oc]).sum() + (b[oc] if b is not None else 0.0)
    return out


class TestTensor:
    def test_frozen_float32(self):
        t = tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float32
        assert not t.flags.writeable

    def test_rank_and_extent_checks(self):
        with pytest.raises(DimensionError):
            tensor(np.zeros((1, 1, 1, 1, 1, 1)))
        with pytest.raises(DimensionError):
            tensor(np.zeros((2, 0)))
        assert tensor(np.float32(3.0)).shape == (1,)


class TestConvolve:
    def test_identity_kernel(self):
        out = convolve(Q, ConvSpec(np.ones((1, 1, 1, 1)), np.zeros(1)))
        np.testing.assert_array_equal(out, Q)

    def test_scaled_kernel_with_bias(self):
        out = convolve(Q, ConvSpec(np.full((1, 1, 1, 1), 2.0), np.ones(1)))
        np.testing.assert_array_equal(out[0, 0], [[3, 5], [7, 9]])

    def test_depth_sum_3d(self):
        out = convolve(np.ones((1, 1, 3, 2, 2), np.float32), ConvSpec(np.ones((1, 1, 3, 1, 1))))
        assert out.shape == (1, 1, 1, 2, 2)
        np.testing.assert_array_equal(out, 3.0)

    def test_no_kernel_flip(self):
        x = np.zeros((1, 1, 1, 5), np.float32)
        x[0, 0, 0, 2] = 1.0
        w = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
        out = convolve(x, ConvSpec(w, padding=(0, 1)))
        # cross-correlation reads the kernel reversed around an impulse
        np.testing.assert_array_equal(out[0, 0, 0], [0, 3, 2, 1, 0])

    def test_conv1d(self):
        x = np.array([[[1, 2, 3, 4]]], np.float32)
        out = convolve(x, ConvSpec(np.array([[[1.0, 0.0, -1.0]]]), padding=1), dims=1)
        np.testing.assert_array_equal(out[0, 0], [-2, -2, -2, 3])

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
    def test_matches_naive_loop(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = convolve(x, ConvSpec(w, b, stride, pad))
        ref = naive_conv2d(x, w, b, stride, pad)
        assert out.shape == ref.shape
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)

    def test_output_extent_formula(self):
        assert conv_output_extent(640, 3, 2, 1) == 320
        assert conv_output_extent(5, 3, 1, 0) == 3

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((2, 1, 4, 9, 9)).astype(np.float32)
        spec = ConvSpec(rng.standard_normal((5, 4, 3, 3)), padding=1)
        a, b = 0.7, -1.3
        lhs = convolve(a * x + b * y, spec).astype(np.float64)
        rhs = a * convolve(x, spec).astype(np.float64) + b * convolve(y, spec)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError) as err:
            convolve(Q, ConvSpec(np.ones((1, 2, 1, 1))))
        assert err.value.axis == 1

    def test_rank_mismatch(self):
        with pytest.raises(DimensionError):
            convolve(Q, ConvSpec(np.ones((1, 1, 1, 1))), dims=3)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ConvSpec(np.ones((1, 1, 1, 1)), stride=0)
        with pytest.raises(ValueError):
            ConvSpec(np.ones((1, 1, 1, 1)), padding=-1)
        with pytest.raises(DimensionError):
            ConvSpec(np.ones((1, 1)))
        with pytest.raises(DimensionError):
            ConvSpec(np.ones((2, 1, 1, 1)), bias=np.zeros(3))

    def test_pure(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        spec = ConvSpec(rng.standard_normal((4, 3, 3, 3)), padding=1)
        assert convolve(x, spec).tobytes() == convolve(x, spec).tobytes()

    def test_batch_items_independent(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 2, 6, 6)).astype(np.float32)
        spec = ConvSpec(rng.standard_normal((2, 2, 3, 3)), padding=1)
        full = convolve(x, spec)
        for i in range(3):
            assert full[i:i + 1].tobytes() == convolve(x[i:i + 1], spec).tobytes()


class TestPool:
    def test_trivial(self):
        assert pool(Q, "max", 2, 2)[0, 0, 0, 0] == 4
        assert pool(Q, "avg", 2, 2)[0, 0, 0, 0] == 2.5

    def test_ramp_max(self):
        ramp = np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(pool(ramp, "max", 2, 2)[0, 0], [[6, 8], [14, 16]])

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            pool(Q, "max", 3, 1)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            pool(Q, "min", 2, 2)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, (1, 2, 6, 4), elements=finite))
    def test_max_dominates_avg(self, x):
        assert np.all(pool(x, "max", 2, 2) >= pool(x, "avg", 2, 2))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-100, 100, width=32), st.sampled_from([1, 2, 4]))
    def test_avg_of_constant(self, v, k):
        x = np.full((1, 1, 8, 8), v, np.float32)
        np.testing.assert_array_equal(pool(x, "avg", k, k), np.float32(v))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, (1, 2, 3, 3), elements=finite), st.sampled_from([1, 2, 3, 4]))
    def test_upsample_then_avg_recovers(self, x, f):
        np.testing.assert_array_equal(pool(upsample_nearest(x, f), "avg", f, f), x)


class TestReductions:
    def test_gap_examples(self):
        assert global_avg_pool(Q)[0, 0, 0, 0] == 2.5
        two = np.array([[[[0, 0], [0, 0]], [[1, 3], [5, 7]]]], np.float32)
        np.testing.assert_array_equal(global_avg_pool(two).ravel(), [0, 4])
        const = np.full((2, 3, 5, 5), 1.7, np.float32)
        np.testing.assert_array_equal(global_avg_pool(const), np.float32(1.7))
        assert global_avg_pool(const).shape == (2, 3, 1, 1)

    def test_gap_rank(self):
        with pytest.raises(DimensionError):
            global_avg_pool(np.ones((2, 2, 2), np.float32))

    def test_ordered_mean_permutation_exact(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 9, 11)).astype(np.float32)
        flat = x.reshape(1, 4, -1)
        shuffled = flat[:, :, rng.permutation(99)].reshape(x.shape)
        assert ordered_mean(x, (2, 3)).tobytes() == ordered_mean(shuffled, (2, 3)).tobytes()


class TestUpsample:
    def test_examples(self):
        np.testing.assert_array_equal(upsample_nearest(Q, 1), Q)
        np.testing.assert_array_equal(
            upsample_nearest(Q, 2)[0, 0],
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
        seven = upsample_nearest(np.full((1, 1, 1, 1), 7, np.float32), 3)
        assert seven.shape == (1, 1, 3, 3) and np.all(seven == 7)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            upsample_nearest(Q, 0)


class TestBatchNorm:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4)).astype(np.float32)
        out = batch_norm_infer(x, np.zeros(3), np.ones(3), np.ones(3), np.zeros(3), eps=0.0)
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_scalar_example(self):
        x = np.full((1, 1, 1, 1), 4.0, np.float32)
        out = batch_norm_infer(x, [2.0], [4.0], [1.0], [0.0], eps=0.0)
        assert out[0, 0, 0, 0] == 1.0

    def test_zero_gamma(self):
        x = np.random.default_rng(1).standard_normal((1, 2, 3, 3, 3)).astype(np.float32)
        out = batch_norm_infer(x, [0.5, 1], [2, 3], [0, 0], [0.25, -1], eps=1e-5)
        np.testing.assert_array_equal(out[0, 0], 0.25)
        np.testing.assert_array_equal(out[0, 1], -1)

    def test_rank5(self):
        x = np.ones((1, 2, 3, 2, 2), np.float32)
        out = batch_norm_infer(x, [1, 0], [1, 1], [1, 2], [0, 0], eps=0.0)
        np.testing.assert_array_equal(out[0, 0], 0)
        np.testing.assert_array_equal(out[0, 1], 2)

    def test_errors(self):
        with pytest.raises(ValueError):
            batch_norm_infer(Q, [0], [-1], [1], [0])
        with pytest.raises(DimensionError):
            batch_norm_infer(Q, [0, 0], [1, 1], [1, 1], [0, 0])

    def test_params_identity(self):
        x = np.random.default_rng(2).standard_normal((1, 3, 2, 2)).astype(np.float32)
        np.testing.assert_array_equal(BatchNormParams.identity(3)(x), x)


class TestActivate:
    def test_values(self):
        z = np.zeros(1, np.float32)
        assert activate(z, "silu")[0] == 0.0
        assert activate(z, "sigmoid")[0] == 0.5
        assert activate(np.ones(1, np.float32), "silu")[0] == pytest.approx(0.731059, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(width=32, allow_nan=False, allow_infinity=False))
    def test_sigmoid_open_interval(self, v):
        s = activate(np.array([v], np.float32), "sigmoid")[0]
        assert 0.0 < s < 1.0

    def test_extreme_inputs_stay_finite(self):
        x = np.array([-1e30, -200, 200, 1e30], np.float32)
        for kind in ("silu", "sigmoid"):
            assert np.all(np.isfinite(activate(x, kind)))

    def test_unknown(self):
        with pytest.raises(ValueError):
            activate(Q, "relu")


class TestShapeOps:
    def test_concat(self):
        np.testing.assert_array_equal(concat([Q], 2), Q)
        rows = concat([np.array([[1, 2]], np.float32), np.array([[3, 4]], np.float32)], 0)
        np.testing.assert_array_equal(rows, [[1, 2], [3, 4]])
        three = concat([np.zeros((1, 256, 40, 40), np.float32)] * 3, 1)
        assert three.shape == (1, 768, 40, 40)

    def test_concat_mismatch_names_axis(self):
        with pytest.raises(DimensionError) as err:
            concat([np.zeros((1, 2, 3, 3), np.float32), np.zeros((1, 2, 4, 3), np.float32)], 1)
        assert err.value.axis == 2

    def test_unsqueeze_squeeze(self):
        assert unsqueeze(np.zeros((2, 3), np.float32), 0).shape == (1, 2, 3)
        assert unsqueeze(np.zeros((1, 256, 80, 80), np.float32), 2).shape == (1, 256, 1, 80, 80)
        x = np.random.default_rng(0).standard_normal((2, 3, 4)).astype(np.float32)
        for a in range(4):
            assert squeeze(unsqueeze(x, a), a).tobytes() == x.tobytes()
        with pytest.raises(DimensionError):
            unsqueeze(x, 4 + 1)
        with pytest.raises(DimensionError):
            squeeze(x, 0)

    def test_add_shape_check(self):
        with pytest.raises(DimensionError):
            add(np.zeros((1, 2), np.float32), np.zeros((2, 1), np.float32))
        np.testing.assert_array_equal(add(Q, Q), 2 * Q)
