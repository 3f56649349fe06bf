import numpy as np
import pytest

from asfneck.errors import DimensionError
from asfneck.params import ParamStore
from asfneck.ssff import SsffWeights, ssff_forward
from asfneck.tensor import BatchNormParams, ConvSpec
from oracles import ssff_depth_mean


def pyramid(rng, c3, h, w, n=1):
    p3 = rng.standard_normal((n, c3, h, w)).astype(np.float32)
    p4 = rng.standard_normal((n, 2 * c3, h // 2, w // 2)).astype(np.float32)
    p5 = rng.standard_normal((n, 4 * c3, h // 4, w // 4)).astype(np.float32)
    return p3, p4, p5


def averaging_weights(rng, c, c4, c5):
    w4 = rng.standard_normal((c, c4)).astype(np.float32) * 0.3
    w5 = rng.standard_normal((c, c5)).astype(np.float32) * 0.3
    b4 = rng.standard_normal(c).astype(np.float32) * 0.1
    b5 = rng.standard_normal(c).astype(np.float32) * 0.1
    fuse = np.zeros((c, c, 3, 1, 1), np.float32)
    for i in range(c):
        fuse[i, i, :, 0, 0] = 1.0 / 3.0
    w = SsffWeights(
        reduce_p4=ConvSpec(w4.reshape(c, c4, 1, 1), b4),
        reduce_p5=ConvSpec(w5.reshape(c, c5, 1, 1), b5),
        fuse3d=ConvSpec(fuse, np.zeros(c)),
        bn=BatchNormParams.identity(c),
    )
    return w, (w4, b4, w5, b5)


def test_shape_equals_p3():
    rng = np.random.default_rng(0)
    p3, p4, p5 = pyramid(rng, 8, 16, 24)
    w = SsffWeights.from_params(ParamStore(0), 8, 16, 32)
    assert ssff_forward(p3, p4, p5, w).shape == p3.shape


def test_full_width_640_shape():
    p3 = np.zeros((1, 256, 80, 80), np.float32)
    p4 = np.zeros((1, 512, 40, 40), np.float32)
    p5 = np.zeros((1, 1024, 20, 20), np.float32)
    w = SsffWeights.from_params(ParamStore(0), 256, 512, 1024)
    assert ssff_forward(p3, p4, p5, w).shape == (1, 256, 80, 80)


def test_zero_inputs_zero_output():
    c = 4
    w = SsffWeights(
        reduce_p4=ConvSpec(np.ones((c, 8, 1, 1)), np.zeros(c)),
        reduce_p5=ConvSpec(np.ones((c, 16, 1, 1)), np.zeros(c)),
        fuse3d=ConvSpec(np.ones((c, c, 3, 1, 1)), np.zeros(c)),
        bn=BatchNormParams.identity(c),
    )
    p3, p4, p5 = (np.zeros_like(t) for t in pyramid(np.random.default_rng(0), c, 8, 8))
    assert np.all(ssff_forward(p3, p4, p5, w) == 0)


def test_depth_averaging_closed_form():
    rng = np.random.default_rng(1)
    c = 6
    p3, p4, p5 = pyramid(rng, c, 12, 8, n=2)
    w, (w4, b4, w5, b5) = averaging_weights(rng, c, 2 * c, 4 * c)
    out = ssff_forward(p3, p4, p5, w)
    ref = ssff_depth_mean(p3, p4, p5, w4, b4, w5, b5)
    np.testing.assert_allclose(out, ref, atol=1e-5)


def test_zero_reduce_weights_ignore_p4_p5():
    rng = np.random.default_rng(2)
    c = 4
    p3, p4, p5 = pyramid(rng, c, 8, 8)
    params = ParamStore(3)
    w = SsffWeights.from_params(params, c, 2 * c, 4 * c)
    zero = SsffWeights(
        reduce_p4=ConvSpec(np.zeros_like(w.reduce_p4.weight), np.zeros(c)),
        reduce_p5=ConvSpec(np.zeros_like(w.reduce_p5.weight), np.zeros(c)),
        fuse3d=w.fuse3d, bn=w.bn,
    )
    a = ssff_forward(p3, p4, p5, zero)
    b = ssff_forward(p3, rng.standard_normal(p4.shape), rng.standard_normal(p5.shape), zero)
    assert a.tobytes() == b.tobytes()


def test_depth_order_matters():
    rng = np.random.default_rng(4)
    c = 4
    p3, p4, p5 = pyramid(rng, c, 8, 8)
    w, _ = averaging_weights(rng, c, c, c)
    fuse = rng.standard_normal((c, c, 3, 1, 1)).astype(np.float32)
    w = SsffWeights(w.reduce_p4, w.reduce_p5, ConvSpec(fuse), w.bn)
    p4c = p4[:, :c]
    p5c = p5[:, :c]
    a = ssff_forward(p3, p4c, p5c, w)
    # swap the roles of p3 and the upsampled p4 content
    p3_swapped = np.repeat(np.repeat(p4c, 2, 2), 2, 3)
    p4_swapped = p3[:, :, ::2, ::2]
    b = ssff_forward(p3_swapped, p4_swapped, p5c, w)
    assert not np.allclose(a, b)


def test_spatial_fuse_kernel_keeps_shape():
    rng = np.random.default_rng(5)
    p3, p4, p5 = pyramid(rng, 4, 8, 12)
    w = SsffWeights.from_params(ParamStore(1), 4, 8, 16, fuse3d_kernel=(3, 3, 3))
    assert ssff_forward(p3, p4, p5, w).shape == p3.shape


def test_reduce_p3_for_other_width():
    rng = np.random.default_rng(6)
    p3 = rng.standard_normal((1, 6, 8, 8)).astype(np.float32)
    _, p4, p5 = pyramid(rng, 4, 8, 8)
    w = SsffWeights.from_params(ParamStore(0), 4, 8, 16, p3_channels=6)
    assert ssff_forward(p3, p4, p5, w).shape == (1, 4, 8, 8)
    bare = SsffWeights.from_params(ParamStore(0), 4, 8, 16)
    with pytest.raises(DimensionError):
        ssff_forward(p3, p4, p5, bare)


@pytest.mark.parametrize("shape4,shape5", [
    ((1, 8, 5, 4), (1, 16, 2, 2)),
    ((1, 8, 4, 4), (1, 16, 3, 2)),
])
def test_ratio_errors(shape4, shape5):
    w = SsffWeights.from_params(ParamStore(0), 4, 8, 16)
    with pytest.raises(DimensionError):
        ssff_forward(np.zeros((1, 4, 8, 8)), np.zeros(shape4), np.zeros(shape5), w)


def test_weight_validation():
    c = 4
    good = dict(
        reduce_p4=ConvSpec(np.ones((c, 8, 1, 1))),
        reduce_p5=ConvSpec(np.ones((c, 16, 1, 1))),
        fuse3d=ConvSpec(np.ones((c, c, 3, 1, 1))),
        bn=BatchNormParams.identity(c),
    )
    SsffWeights(**good)
    with pytest.raises(DimensionError):
        SsffWeights(**{**good, "reduce_p4": ConvSpec(np.ones((c, 8, 3, 3)))})
    with pytest.raises(DimensionError):
        SsffWeights(**{**good, "fuse3d": ConvSpec(np.ones((c, c, 2, 1, 1)))})
    with pytest.raises(DimensionError):
        SsffWeights(**{**good, "fuse3d": ConvSpec(np.ones((c, c, 3, 1, 1)), padding=(1, 0, 0))})
