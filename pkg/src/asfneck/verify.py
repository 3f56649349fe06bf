"""Release-gate invariant suite behind ``asf verify``.

Each registered property returns ``(passed, measured_error)``. ``run`` writes
one TAP-style line per property::

    ok 12 - ssff.shape_equals_p3 # err=0
    not ok 24 - losses.grad_matches_finite_differences # err=3.1e-01
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from . import asft
from .assembly import AsfModel, neck_stages, toy_backbone
from .config import NeckConfig
from .cpam import (
    ChannelAttnConfig,
    channel_attention,
    channel_gates,
    kernel_size_for,
    position_attention,
    position_gates,
)
from .losses import eiou_grad_array, eiou_terms, iou_array
from .params import ParamStore
from .postprocess import Detection, SoftNmsParams, nms, soft_nms
from .scale_space import GaussianSpec, build_scale_stack, gaussian_blur, gaussian_kernel_1d
from .ssff import SsffWeights, ssff_forward
from .tensor import BatchNormParams, ConvSpec, convolve, pool, upsample_nearest
from .tfe import TfeWeights, tfe_forward

Result = Tuple[bool, float]


@dataclass
class Context:
    cfg: NeckConfig
    inject_bad_grad: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1234))


@dataclass(frozen=True)
class Property:
    name: str
    fn: Callable[[Context], Result]


PROPERTIES: List[Property] = []


def prop(name: str):
    def deco(fn):
        PROPERTIES.append(Property(name, fn))
        return fn
    return deco


def _rand(ctx, *shape):
    return ctx.rng.standard_normal(shape).astype(np.float32)


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of a function of a ``(..., 4)`` box array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        g[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def random_smooth_box_pairs(rng, n: int, margin: float = 1e-2):
    """Random box pairs with every pred/gt edge pair at least ``margin`` apart and a
    clearly positive or clearly absent overlap, i.e. away from non-smooth points."""
    pred, gt = [], []
    while len(pred) < n:
        (px1, px2), (py1, py2), (gx1, gx2), (gy1, gy2) = np.sort(rng.uniform(0, 100, (4, 2)), axis=1)
        p = np.array([px1, py1, px2, py2])
        g = np.array([gx1, gy1, gx2, gy2])
        xs = np.array([p[0], p[2], g[0], g[2]])
        ys = np.array([p[1], p[3], g[1], g[3]])
        gaps = [np.min(np.abs(np.subtract.outer(v, v))[np.triu_indices(4, 1)]) for v in (xs, ys)]
        if min(gaps) < margin or p[2] - p[0] < margin or p[3] - p[1] < margin:
            continue
        pred.append(p)
        gt.append(g)
    return np.array(pred), np.array(gt)


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row ``|a - b| / max(|a|, |b|)`` (Euclidean norms), 0 where both vanish."""
    num = np.linalg.norm(a - b, axis=-1)
    den = np.maximum(np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


# tensor core

@prop("tensor.conv_identity")
def _(ctx):
    x = _rand(ctx, 2, 3, 5, 4)
    y = convolve(x, ConvSpec(np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1), np.zeros(3)))
    err = _max_abs(x, y)
    return err == 0.0, err


@prop("tensor.conv_linear")
def _(ctx):
    spec = ConvSpec(_rand(ctx, 4, 3, 3, 3), None, padding=1)
    x, y = _rand(ctx, 1, 3, 8, 8), _rand(ctx, 1, 3, 8, 8)
    a, b = 1.7, -0.6
    lhs = convolve((a * x + b * y).astype(np.float32), spec).astype(np.float64)
    rhs = a * convolve(x, spec).astype(np.float64) + b * convolve(y, spec)
    err = float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-12))
    return err < 1e-5, err


@prop("tensor.avgpool_constant")
def _(ctx):
    x = np.full((1, 2, 6, 6), 3.25, np.float32)
    err = _max_abs(pool(x, "avg", 2, 2), 3.25)
    return err == 0.0, err


@prop("tensor.maxpool_ge_avgpool")
def _(ctx):
    x = _rand(ctx, 2, 3, 8, 8)
    gap = float(np.min(pool(x, "max", 2, 2) - pool(x, "avg", 2, 2)))
    return gap >= 0, max(0.0, -gap)


@prop("tensor.upsample_then_avgpool_roundtrip")
def _(ctx):
    x = _rand(ctx, 1, 2, 5, 3)
    err = _max_abs(pool(upsample_nearest(x, 3), "avg", 3, 3), x)
    return err == 0.0, err


@prop("tensor.pure")
def _(ctx):
    x = _rand(ctx, 1, 3, 9, 9)
    spec = ConvSpec(_rand(ctx, 2, 3, 3, 3), _rand(ctx, 2), stride=2, padding=1)
    same = convolve(x, spec).tobytes() == convolve(x, spec).tobytes()
    return same, 0.0 if same else 1.0


@prop("tensor.asft_roundtrip")
def _(ctx):
    x = _rand(ctx, 2, 3, 4)
    y = asft.decode(asft.encode(x))
    same = y.shape == x.shape and y.tobytes() == x.tobytes()
    return same, 0.0 if same else 1.0


# scale space

@prop("scale_space.kernel_normalized")
def _(ctx):
    err = max(abs(gaussian_kernel_1d(GaussianSpec(s)).sum() - 1.0) for s in (0.5, 1.0, 2.5, 7.0))
    return err <= 1e-9, float(err)


@prop("scale_space.blur_commutes_with_constant")
def _(ctx):
    x = _rand(ctx, 1, 1, 16, 16)
    spec = GaussianSpec(1.5)
    err = _max_abs(gaussian_blur(x + np.float32(2.0), spec), gaussian_blur(x, spec).astype(np.float64) + 2.0)
    return err < 1e-5, err


@prop("scale_space.variance_non_increasing")
def _(ctx):
    board = (np.indices((32, 32)).sum(axis=0) % 2).astype(np.float32)[None, None]
    stack = build_scale_stack(board, [0.5, 1.0, 2.0, 3.0, 4.0])
    var = [float(np.var(level.astype(np.float64))) for level in stack.levels]
    worst = max(b - a for a, b in zip(var, var[1:]))
    return worst <= 0, max(0.0, worst)


# ssff

def _ssff_weights(ctx, c, c4, c5, zero_reduce=False):
    r4, r5 = _rand(ctx, c, c4, 1, 1), _rand(ctx, c, c5, 1, 1)
    if zero_reduce:
        r4, r5 = np.zeros_like(r4), np.zeros_like(r5)
    return SsffWeights(ConvSpec(r4, np.zeros(c)), ConvSpec(r5, np.zeros(c)),
                       ConvSpec(_rand(ctx, c, c, 3, 1, 1), np.zeros(c)), BatchNormParams.identity(c))


@prop("ssff.shape_equals_p3")
def _(ctx):
    worst = 0
    for _ in range(10):
        c = int(ctx.rng.integers(1, 6))
        h, w = 4 * ctx.rng.integers(1, 5, size=2)
        out = ssff_forward(_rand(ctx, 1, c, h, w), _rand(ctx, 1, 2 * c, h // 2, w // 2),
                           _rand(ctx, 1, 4 * c, h // 4, w // 4), _ssff_weights(ctx, c, 2 * c, 4 * c))
        worst += out.shape != (1, c, h, w)
    return worst == 0, float(worst)


@prop("ssff.gated_by_reduce_weights")
def _(ctx):
    w = _ssff_weights(ctx, 3, 6, 12, zero_reduce=True)
    p3 = _rand(ctx, 1, 3, 8, 8)
    a = ssff_forward(p3, _rand(ctx, 1, 6, 4, 4), _rand(ctx, 1, 12, 2, 2), w)
    b = ssff_forward(p3, _rand(ctx, 1, 6, 4, 4), _rand(ctx, 1, 12, 2, 2), w)
    err = _max_abs(a, b)
    return err == 0.0, err


@prop("ssff.depth_order_matters")
def _(ctx):
    c = 3
    w = SsffWeights(ConvSpec(np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)),
                    ConvSpec(np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)),
                    ConvSpec(_rand(ctx, c, c, 3, 1, 1)), BatchNormParams.identity(c))
    a, b = _rand(ctx, 1, c, 8, 8), _rand(ctx, 1, c, 8, 8)
    a4 = pool(a, "avg", 2, 2)
    b4 = pool(b, "avg", 2, 2)
    x = ssff_forward(a, b4, pool(a4, "avg", 2, 2), w)
    y = ssff_forward(b, a4, pool(b4, "avg", 2, 2), w)
    diff = _max_abs(x, y)
    return diff > 0, diff


@prop("ssff.depth_average_oracle")
def _(ctx):
    c = 2
    eye = np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)
    fuse = np.zeros((c, c, 3, 1, 1), np.float32)
    for i in range(c):
        fuse[i, i, :, 0, 0] = 1.0 / 3.0
    w = SsffWeights(ConvSpec(eye, np.zeros(c)), ConvSpec(eye, np.zeros(c)), ConvSpec(fuse, np.zeros(c)),
                    BatchNormParams.identity(c))
    p3, p4, p5 = _rand(ctx, 1, c, 8, 8), _rand(ctx, 1, c, 4, 4), _rand(ctx, 1, c, 2, 2)
    up = lambda t, f: np.repeat(np.repeat(t.astype(np.float64), f, 2), f, 3)
    m = (p3.astype(np.float64) + up(p4, 2) + up(p5, 4)) / 3.0
    expected = m / (1.0 + np.exp(-m))
    err = _max_abs(ssff_forward(p3, p4, p5, w), expected)
    return err < 1e-5, err


# tfe

def _tfe_weights(ctx, c, cl, cm, cs):
    conv = lambda o, i: ConvSpec(_rand(ctx, o, i, 1, 1), np.zeros(o))
    return TfeWeights(conv(c, cl), conv(c, cm), conv(c, cs), conv(c, c), conv(c, c), conv(c, c))


@prop("tfe.channels_and_size")
def _(ctx):
    bad = 0
    for _ in range(10):
        c, cl, cm, cs = (int(v) for v in ctx.rng.integers(1, 6, size=4))
        h, w = 2 * ctx.rng.integers(1, 5, size=2)
        out = tfe_forward(_rand(ctx, 1, cl, 2 * h, 2 * w), _rand(ctx, 1, cm, h, w),
                          _rand(ctx, 1, cs, h // 2, w // 2), _tfe_weights(ctx, c, cl, cm, cs))
        bad += out.shape != (1, 3 * c, h, w)
    return bad == 0, float(bad)


@prop("tfe.branch_isolation")
def _(ctx):
    c = 3
    w = _tfe_weights(ctx, c, 2, 3, 4)
    ins = [_rand(ctx, 1, 2, 8, 8), _rand(ctx, 1, 3, 4, 4), _rand(ctx, 1, 4, 2, 2)]
    leak = 0.0
    for k in range(3):
        zeroed = list(ins)
        zeroed[k] = np.zeros_like(ins[k])
        out = tfe_forward(*zeroed, w)
        leak = max(leak, float(np.max(np.abs(out[:, k * c:(k + 1) * c]))))
        others = [b for b in range(3) if b != k]
        if any(np.all(out[:, b * c:(b + 1) * c] == 0) for b in others):
            leak = max(leak, 1.0)
    return leak == 0.0, leak


# cpam

def _pos_state(ctx, c):
    params = ParamStore(int(ctx.rng.integers(1 << 30)))
    from .cpam import CpamWeights
    return CpamWeights.from_params(params, c)


@prop("cpam.gates_bound_outputs")
def _(ctx):
    worst = 0.0
    for _ in range(20):
        c = int(ctx.rng.choice([2, 4, 8, 16]))
        e = _rand(ctx, 1, c, 5, 6) * 3
        w = _pos_state(ctx, c)
        for out in (channel_attention(e, w.channel), position_attention(e, w.position)):
            worst = max(worst, float(np.max(np.abs(out) - np.abs(e))))
    return worst <= 0, max(0.0, worst)


@prop("cpam.channel_gates_spatial_permutation")
def _(ctx):
    c = 8
    w = _pos_state(ctx, c)
    e = _rand(ctx, 2, c, 6, 7)
    perm = ctx.rng.permutation(6 * 7)
    e2 = e.reshape(2, c, -1)[:, :, perm].reshape(e.shape)
    same = channel_gates(e, w.channel).tobytes() == channel_gates(e2, w.channel).tobytes()
    return same, 0.0 if same else _max_abs(channel_gates(e, w.channel), channel_gates(e2, w.channel))


@prop("cpam.position_gates_axis_permutation")
def _(ctx):
    c = 4
    w = _pos_state(ctx, c)
    e = _rand(ctx, 1, c, 6, 5)
    g = position_gates(e, w.position)
    rows = position_gates(e[:, :, ctx.rng.permutation(6)], w.position)
    cols = position_gates(e[:, :, :, ctx.rng.permutation(5)], w.position)
    ok = g.s_w.tobytes() == rows.s_w.tobytes() and g.s_h.tobytes() == cols.s_h.tobytes()
    return ok, 0.0 if ok else max(_max_abs(g.s_w, rows.s_w), _max_abs(g.s_h, cols.s_h))


@prop("cpam.kernel_size_odd_monotone")
def _(ctx):
    ks = [kernel_size_for(c, 2, 1) for c in range(2, 4097)]
    ok = all(k >= 1 and k % 2 == 1 for k in ks) and all(b >= a for a, b in zip(ks, ks[1:]))
    return ok, 0.0 if ok else 1.0


# losses

def _random_boxes(ctx, n):
    xy = ctx.rng.uniform(0, 100, (n, 2))
    wh = ctx.rng.uniform(0.5, 50, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


@prop("losses.nonnegative_zero_iff_equal")
def _(ctx):
    a, b = _random_boxes(ctx, 500), _random_boxes(ctx, 500)
    total = eiou_terms(a, b)[4]
    self_total = eiou_terms(a, a)[4]
    ok = bool(np.all(total > 0)) and bool(np.all(self_total == 0))
    return ok, float(max(np.max(self_total), -np.min(total)))


@prop("losses.scale_invariant")
def _(ctx):
    a, b = _random_boxes(ctx, 200), _random_boxes(ctx, 200)
    ref = np.stack(eiou_terms(a, b)[:5])
    err = max(_max_abs(np.stack(eiou_terms(a * s, b * s)[:5]), ref) for s in (0.01, 3.0, 250.0))
    return err < 1e-9, err


@prop("losses.symmetric")
def _(ctx):
    a, b = _random_boxes(ctx, 200), _random_boxes(ctx, 200)
    err = max(_max_abs(iou_array(a, b), iou_array(b, a)), _max_abs(eiou_terms(a, b)[4], eiou_terms(b, a)[4]))
    return err < 1e-12, err


@prop("losses.grad_matches_finite_differences")
def _(ctx):
    pred, gt = random_smooth_box_pairs(ctx.rng, 1000)
    analytic = eiou_grad_array(pred, gt)
    if ctx.inject_bad_grad:
        analytic = analytic * 1.5 + 0.01
    numeric = central_difference(lambda p: eiou_terms(p, gt)[4], pred, 1e-4)
    err = float(np.max(relative_error(analytic, numeric)))
    return err < 1e-3, err


# postprocess

def _random_dets(ctx, n, classes=1):
    boxes = _random_boxes(ctx, n) * 0.3
    scores = ctx.rng.uniform(0.01, 1.0, n)
    return [Detection(tuple(b), float(s), int(ctx.rng.integers(classes))) for b, s in zip(boxes, scores)]


@prop("postprocess.soft_nms_never_increases")
def _(ctx):
    worst, lost = 0.0, 0
    for _ in range(50):
        dets = _random_dets(ctx, 10, classes=2)
        out = soft_nms(dets, SoftNmsParams(0.5, 0.0, True))
        lost += len(out) != len(dets)
        before = {(d.box, d.class_id): d.score for d in dets}
        worst = max([worst] + [d.score - before[(d.box, d.class_id)] for d in out])
    return worst <= 0 and lost == 0, max(worst, float(lost))


@prop("postprocess.nms_subset_and_separated")
def _(ctx):
    bad = 0
    for _ in range(50):
        dets = _random_dets(ctx, 12, classes=2)
        out = nms(dets, 0.4, per_class=True)
        bad += any(d not in dets for d in out)
        for i, a in enumerate(out):
            for b in out[i + 1:]:
                if a.class_id == b.class_id and iou_array(a.box, b.box) > 0.4:
                    bad += 1
    return bad == 0, float(bad)


@prop("postprocess.deterministic")
def _(ctx):
    dets = _random_dets(ctx, 10, classes=2)
    dets += [dets[0], dets[1]]
    ok = soft_nms(dets) == soft_nms(dets) and nms(dets, 0.5) == nms(dets, 0.5)
    return ok, 0.0 if ok else 1.0


@prop("postprocess.large_sigma_keeps_scores")
def _(ctx):
    dets = _random_dets(ctx, 10)
    out = soft_nms(dets, SoftNmsParams(1e9, 0.0, False))
    err = max(abs(a - b) for a, b in zip(sorted(d.score for d in dets), sorted(d.score for d in out)))
    return err < 1e-8, float(err)


# assembly

def _small_image(ctx, size):
    return ctx.rng.random((1, 3, size, size)).astype(np.float32)


@prop("assembly.end_to_end_finite_and_shaped")
def _(ctx):
    model = AsfModel(ctx.cfg)
    res = model.forward(_small_image(ctx, 64))
    c = ctx.cfg.c3_width
    expected = [(1, c, 8, 8), (1, 2 * c, 4, 4), (1, 4 * c, 2, 2)]
    ok = [t.shape for t in res.outputs] == expected and all(np.isfinite(t).all() for t in res.outputs)
    scores = [d.score for d in res.head.detections[0]]
    ok = ok and all(0 < s < 1 for s in scores)
    return ok, 0.0 if ok else 1.0


@prop("assembly.bypass_dataflow")
def _(ctx):
    cfg = ctx.cfg.replace(bypass__ssff=False, bypass__cpam=False, bypass__tfe=False,
                          junctions__bottom_up_from="p3_merge")
    img = _small_image(ctx, 64)
    params = ParamStore(cfg.seed, bn_eps=cfg.bn_eps)
    pyr = toy_backbone(img, cfg, params)
    base = neck_stages(pyr, cfg, params)
    bad = 0
    for flag in ("ssff", "cpam"):
        s = neck_stages(pyr, cfg.replace(**{f"bypass__{flag}": True}), params)
        bad += s["n3"].tobytes() == base["n3"].tobytes()
        bad += s["n4"].tobytes() != base["n4"].tobytes()
        bad += s["n5"].tobytes() != base["n5"].tobytes()
    s = neck_stages(pyr, cfg.replace(bypass__tfe=True), params)
    bad += any(s[k].tobytes() == base[k].tobytes() for k in ("n3", "n4", "n5"))
    return bad == 0, float(bad)


@prop("assembly.throughput_monotone_in_area")
def _(ctx):
    model = AsfModel(ctx.cfg)
    times = {}
    for size in (64, 256):
        pyr = model.backbone(_small_image(ctx, size))
        model.neck(pyr)
        t0 = time.perf_counter()
        model.neck(pyr)
        times[size] = time.perf_counter() - t0
    return times[64] <= times[256], times[64] / times[256]


@prop("cli.forward_deterministic")
def _(ctx):
    img = _small_image(ctx, 64)
    a = AsfModel(ctx.cfg).forward(img)
    b = AsfModel(ctx.cfg).forward(img)
    ok = all(x.tobytes() == y.tobytes() for x, y in zip(a.outputs, b.outputs))
    ok = ok and a.head.detections == b.head.detections
    return ok, 0.0 if ok else 1.0


def run(cfg: NeckConfig, inject_bad_grad: bool = False, out=None) -> Tuple[bool, List[str]]:
    """Run every registered property; returns (all passed, log lines)."""
    ctx = Context(cfg, inject_bad_grad)
    lines, all_ok = [], True
    for i, p in enumerate(PROPERTIES, 1):
        try:
            ok, err = p.fn(ctx)
            line = f"{'ok' if ok else 'not ok'} {i} - {p.name} # err={err:.3e}"
        except Exception as exc:  # a crashing property is a failing property
            ok = False
            line = f"not ok {i} - {p.name} # error={type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        lines.append(line)
        if out is not None:
            print(line, file=out, flush=True)
    return all_ok, lines
