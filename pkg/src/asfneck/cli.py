"""``asf`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import asft, verify
from .assembly import ATTENTIONS, AsfModel, neck_stages
from .bench import bench
from .config import SCHEMA, NeckConfig, load_config
from .cpam import CpamWeights, channel_attention, channel_gates, position_gates
from .errors import ConfigError, ImageError
from .imageio import letterbox, load_image, write_heatmap, write_pgm
from .losses import eiou_loss_batch
from .params import ParamStore
from .postprocess import Detection, SoftNmsParams, nms, soft_nms
from .scale_space import build_scale_stack
from .tensor import add


@dataclass
class RunReport:
    config_hash: str
    image: str
    letterbox: dict
    shapes: Dict[str, List[int]]
    num_detections: int
    timing: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _config(path: Optional[str]) -> NeckConfig:
    cfg = load_config(path)
    if not cfg.bypass.cpam and cfg.cpam.attention not in ATTENTIONS:
        raise ConfigError(f"unknown attention {cfg.cpam.attention!r}; registered: {sorted(ATTENTIONS)}",
                          path="$.cpam.attention")
    return cfg


def _model(cfg: NeckConfig, weights: Optional[str]) -> AsfModel:
    params = ParamStore.load(weights) if weights else None
    return AsfModel(cfg, params)


def format_detections(dets: List[Detection], boxes: Optional[np.ndarray] = None) -> str:
    if boxes is None:
        boxes = np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4)
    lines = [
        f"{d.class_id}\t{d.score:.6f}\t" + "\t".join(f"{v:.4f}" for v in b)
        for d, b in zip(dets, boxes)
    ]
    return "".join(line + "\n" for line in lines)


def parse_detections(text: str) -> List[Detection]:
    dets = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 'class score x1 y1 x2 y2', got {line!r}")
        cls, score, *box = parts
        dets.append(Detection(tuple(float(v) for v in box), float(score), int(cls)))
    return dets


def cmd_forward(args) -> int:
    cfg = _config(args.config)
    rgb = load_image(args.image)
    image, lb = letterbox(rgb, cfg.input_size)
    model = _model(cfg, args.weights)
    res = model.forward(image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tensors = {"image": image, "p2": res.pyramid.p2, "p3": res.pyramid.p3, "p4": res.pyramid.p4,
               "p5": res.pyramid.p5, **res.stages, "proto": res.head.proto}
    if args.dump:
        dump_dir = out / "tensors"
        dump_dir.mkdir(exist_ok=True)
        for name, t in tensors.items():
            asft.save(dump_dir / f"{name}.asft", t)
    if args.save_weights:
        model.params.save(args.save_weights)

    dets = res.head.detections[0]
    boxes = lb.to_original(np.array([d.box for d in dets]).reshape(-1, 4))
    (out / "detections.tsv").write_text(format_detections(dets, boxes))
    timing = {k: round(v, 3) for k, v in res.times_ms.items()}
    timing["total"] = round(sum(res.times_ms.values()), 3)
    report = RunReport(
        config_hash=cfg.hash(), image=Path(args.image).name, letterbox=lb.as_dict(),
        shapes={k: list(v.shape) for k, v in tensors.items()}, num_detections=len(dets),
        timing=timing,
    )
    (out / "report.json").write_text(report.to_json())
    print(f"n3 {tuple(res.stages['n3'].shape)} n4 {tuple(res.stages['n4'].shape)} "
          f"n5 {tuple(res.stages['n5'].shape)} detections {len(dets)} -> {out}")
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args.config)
    ok, lines = verify.run(cfg, inject_bad_grad=args.inject_bad_grad, out=sys.stdout)
    if args.log:
        Path(args.log).write_text("".join(line + "\n" for line in lines))
    return 0 if ok else 1


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    rep = bench(cfg, args.iters, args.size, warmup=args.warmup)
    if args.json:
        print(json.dumps(rep.as_dict(), indent=2))
    else:
        print(f"size {rep.size} iters {rep.iters} mean {rep.mean_ms:.2f} ms "
              f"p50 {rep.p50_ms:.2f} ms p95 {rep.p95_ms:.2f} ms fps {rep.fps:.3f}")
    return 0


def cmd_loss(args) -> int:
    res = eiou_loss_batch(asft.load(args.pred), asft.load(args.gt))
    names = ["iou", "l_iou", "l_dis", "l_asp", "total", "degenerate"]
    rows = ["\t".join(names)]
    for i in range(len(res["total"])):
        vals = [f"{res[n][i]:.6f}" for n in names[:-1]] + [str(int(res["degenerate"][i]))]
        rows.append("\t".join(vals))
    sys.stdout.write("\n".join(rows) + "\n")
    return 0


def cmd_nms(args) -> int:
    text = sys.stdin.read() if args.input in (None, "-") else Path(args.input).read_text()
    dets = parse_detections(text)
    if args.hard is not None:
        out = nms(dets, args.hard, per_class=not args.class_agnostic)
    else:
        out = soft_nms(dets, SoftNmsParams(args.sigma, args.floor, not args.class_agnostic))
    text = format_detections(out)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_scale_stack(args) -> int:
    rgb = load_image(args.image)
    gray = args.gray
    img = rgb[:, :, :1] if gray else rgb
    image = img.transpose(2, 0, 1)[None].astype(np.float32) / 255.0
    sigmas = [float(s) for s in args.sigmas.split(",")]
    stack = build_scale_stack(image, sigmas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (level, sigma) in enumerate(zip(stack.levels, stack.sigmas)):
        stem = out / f"level{i}_sigma{sigma:g}"
        if args.format == "asft":
            asft.save(f"{stem}.asft", level)
        else:
            gray_level = level[0].mean(axis=0)
            write_pgm(f"{stem}.pgm", np.clip(np.round(gray_level * 255.0), 0, 255).astype(np.uint8))
    print(f"{len(stack)} levels -> {out}")
    return 0


def cmd_heatmap(args) -> int:
    cfg = _config(args.config)
    if cfg.bypass.cpam:
        raise ConfigError("heatmaps need the attention block; bypass.cpam is set", path="$.bypass.cpam")
    image, _ = letterbox(load_image(args.image), cfg.input_size)
    model = _model(cfg, args.weights)
    pyr = model.backbone(image)
    stages = neck_stages(pyr, cfg, model.params)
    w = CpamWeights.from_params(model.params, cfg.c3_width, cfg.cpam.gamma, cfg.cpam.b,
                                cfg.cpam.pos_reduction)
    input1 = stages["m3"] if cfg.junctions.cpam_input1 == "p3_merge" else pyr.p3
    gates_c = channel_gates(input1, w.channel)
    pos = position_gates(add(channel_attention(input1, w.channel), stages["ssff"]), w.position)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = {
        "channel_gates": gates_c[0, :, 0, 0][None, :],
        "s_w": pos.s_w[0, :, 0, :],
        "s_h": pos.s_h[0, :, :, 0],
        "position": (pos.s_h[0].astype(np.float64) * pos.s_w[0]).mean(axis=0),
    }
    for name, values in maps.items():
        write_heatmap(out / f"{name}.pgm", values)
    print(f"{len(maps)} heatmaps -> {out}")
    return 0


def cmd_config(args) -> int:
    if args.schema:
        print(json.dumps(SCHEMA, indent=2))
    else:
        sys.stdout.write(_config(args.config).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="run backbone, neck, head and Soft-NMS on an image")
    f.add_argument("image")
    f.add_argument("--config")
    f.add_argument("--out", default="asf_out")
    f.add_argument("--dump", action="store_true", help="write every stage tensor as ASFT")
    f.add_argument("--weights", help="weight directory (manifest.json + ASFT files)")
    f.add_argument("--save-weights", help="write the weights used to this directory")
    f.set_defaults(func=cmd_forward)

    v = sub.add_parser("verify", help="run the invariant suite (TAP-style log)")
    v.add_argument("--config")
    v.add_argument("--log")
    v.add_argument("--inject-bad-grad", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time neck_forward")
    b.add_argument("--config")
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--size", type=int)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)

    lo = sub.add_parser("loss", help="EIoU breakdown for two N x 4 ASFT box files")
    lo.add_argument("pred")
    lo.add_argument("gt")
    lo.set_defaults(func=cmd_loss)

    n = sub.add_parser("nms", help="Soft-NMS (or --hard NMS) over TSV detections")
    n.add_argument("input", nargs="?")
    n.add_argument("--output", "-o")
    n.add_argument("--sigma", type=float, default=0.5)
    n.add_argument("--floor", type=float, default=0.001)
    n.add_argument("--class-agnostic", action="store_true")
    n.add_argument("--hard", type=float, metavar="IOU", help="classical NMS at this IoU threshold")
    n.set_defaults(func=cmd_nms)

    s = sub.add_parser("scale-stack", help="Gaussian scale-space levels of an image")
    s.add_argument("image")
    s.add_argument("--sigmas", default="1,2,4,8")
    s.add_argument("--out", default="scale_stack")
    s.add_argument("--format", choices=("asft", "pgm"), default="pgm")
    s.add_argument("--gray", action="store_true", help="use the first channel only")
    s.set_defaults(func=cmd_scale_stack)

    h = sub.add_parser("heatmap", help="export CPAM gate maps as PGM heatmaps")
    h.add_argument("image")
    h.add_argument("--config")
    h.add_argument("--weights")
    h.add_argument("--out", default="heatmaps")
    h.set_defaults(func=cmd_heatmap)

    c = sub.add_parser("config", help="print the effective config or its JSON schema")
    c.add_argument("--config")
    c.add_argument("--schema", action="store_true")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ImageError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
