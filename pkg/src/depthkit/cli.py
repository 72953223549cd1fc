"""Command-line interface.

Four subcommands: ``encode`` renders depth maps to 8-bit imagery,
``arch`` reports on detector architecture graphs, ``eval`` scores
detections against ground truth, ``analyze`` builds depth-vs-size
statistics.  Exit codes: 0 success, 2 malformed input file (with the
location of the fault), 3 bad parameter or missing file, 4 internal
invariant violation.  Given identical inputs and flags, every
subcommand writes byte-identical output files on every run.

``DEPTHKIT_THREADS`` caps worker threads (file-level parallelism in
``encode`` and the compiled kernels); ``DEPTHKIT_NUMBA=0`` selects the
pure-numpy kernel path.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels, analysis, encoding, evaluation, geometry, netpbm
from .arch import (
    GraphError,
    Lcg,
    build_architecture,
    count_parameters,
    execute_forward,
    format_shape,
    propagate_shapes,
    shape_csv,
    to_dot,
)
from .netpbm import ParseError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthkit",
        description="Depth encodings, detector architecture graphs, and detection metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="render depth maps to 8-bit imagery")
    enc.add_argument("files", nargs="+", help="depth maps (PFM meters or 16-bit PGM millimeters)")
    enc.add_argument("--mode", required=True, help="gray, jet, or hdha")
    enc.add_argument("--dmin", type=float, help="depth mapped to 0 (gray/jet)")
    enc.add_argument("--dmax", type=float, help="depth mapped to 255 (gray/jet)")
    enc.add_argument("--intrinsics", help="camera intrinsics JSON (hdha)")
    enc.add_argument("--stats", help="channel stats JSON: applied if the file exists, "
                                     "otherwise computed from the inputs and written there (hdha)")
    enc.add_argument("--gravity", help="fixed gravity direction as 'x,y,z' (hdha); "
                                       "default: estimated per image")
    enc.add_argument("--k-neighbors", type=int, default=25,
                     help="valid points per normal-estimation window (default 25)")
    enc.add_argument("--scale", type=float, default=None,
                     help="annotate outputs with this short-side training scale; "
                          "metadata only, images are not resampled")
    enc.add_argument("--out", default=".", help="output directory (default: current)")

    arch = sub.add_parser("arch", help="inspect a detector architecture graph")
    arch.add_argument("--variant", required=True,
                      help="baseline, raw-EC/MC/LC, proc-EC/MC/LC, hdha-split, prior-late")
    arch.add_argument("--backbone", required=True, help="vgg16 or resnet101")
    arch.add_argument("--classes", type=int, default=21,
                      help="detection classes including background (default 21)")
    arch.add_argument("--rois", type=int, default=300,
                      help="region proposals after suppression (default 300)")
    arch.add_argument("--input", default="600x800",
                      help="input size HxW for shape propagation (default 600x800)")
    arch.add_argument("--depth-channels", type=int, default=None,
                      help="depth input channels (default: 1 raw, 3 processed)")
    arch.add_argument("--report", default="all", help="params, shapes, or all")
    arch.add_argument("--forward", action="store_true",
                      help="run the seeded numeric executor and print output digests")
    arch.add_argument("--seed", type=int, default=0, help="weight seed for --forward")
    arch.add_argument("--out", default=".", help="output directory (default: current)")

    ev = sub.add_parser("eval", help="score detections against ground truth")
    ev.add_argument("--metric", required=True, help="voc, coco, confusion, or confdiff")
    ev.add_argument("--dets", required=True, help="detections JSONL")
    ev.add_argument("--dets-b", help="second detections JSONL (confdiff)")
    ev.add_argument("--gts", required=True, help="ground-truth JSONL")
    ev.add_argument("--classes", help="class table JSON (names -> ids by position)")
    ev.add_argument("--iou", type=float, default=0.5, help="match threshold (default 0.5)")
    ev.add_argument("--score-thresh", type=float, default=0.5,
                    help="confusion-matrix score cutoff (default 0.5)")
    ev.add_argument("--use-difficult", action="store_true",
                    help="count difficult ground truth like any other")
    ev.add_argument("--out", default=".", help="output directory (default: current)")

    an = sub.add_parser("analyze", help="depth-vs-size statistics from ground truth")
    an.add_argument("--gts", help="ground-truth JSONL")
    an.add_argument("--depth-dir", help="directory of <image_id>.pfm or .pgm depth maps")
    an.add_argument("--classes", help="class table JSON")
    an.add_argument("--bins", type=int, default=20, help="bins per heatmap axis (default 20)")
    an.add_argument("--similarity", nargs=2, metavar=("A", "B"),
                    help="compare two heatmap CSVs instead of building one")
    an.add_argument("--out", default=".", help="output directory (default: current)")
    return parser


def _stem(path: str) -> str:
    base = os.path.basename(path)
    return base.rsplit(".", 1)[0] if "." in base else base


def _parse_gravity(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"--gravity needs 'x,y,z', got {text!r}")
    return np.array([float(p) for p in parts])


def _encode_one(path: str, args, cam, gravity, stats) -> str:
    depth = encoding.load_depth(path)
    stem = _stem(path)
    info = depth.summary()
    if args.mode in ("gray", "jet"):
        gray = encoding.grayscale_encode(depth, args.dmin, args.dmax)
        if args.mode == "gray":
            out_path = os.path.join(args.out, f"{stem}_gray.pgm")
            netpbm.write_pgm8(out_path, gray.quantized)
        else:
            jet = encoding.jet_encode(gray)
            out_path = os.path.join(args.out, f"{stem}_jet.ppm")
            netpbm.write_ppm8(out_path, jet.rgb)
    else:
        hdha = geometry.hdha_encode(depth, cam, gravity=gravity,
                                    k_neighbors=args.k_neighbors)
        out_path = os.path.join(args.out, f"{stem}_hdha.ppm")
        netpbm.write_ppm8(out_path, encoding.hdha_to_rgb(hdha, stats=stats))
    scale_note = "" if args.scale is None else f" scale={args.scale:g}"
    if info["min"] is None:
        return f"{path}: valid=0.000{scale_note} -> {out_path}"
    return (f"{path}: valid={info['valid_fraction']:.3f} "
            f"min={info['min']:.3f}m max={info['max']:.3f}m{scale_note} -> {out_path}")


def _cmd_encode(args) -> int:
    if args.mode not in ("gray", "jet", "hdha"):
        raise ValueError(f"unknown mode {args.mode!r}, expected gray, jet, or hdha")
    if args.mode in ("gray", "jet"):
        if args.dmin is None or args.dmax is None:
            raise ValueError(f"--mode {args.mode} requires --dmin and --dmax")
    cam = None
    if args.mode == "hdha":
        if not args.intrinsics:
            raise ValueError("--mode hdha requires --intrinsics (camera intrinsics JSON)")
        cam = encoding.CameraIntrinsics.from_json(args.intrinsics)
    gravity = _parse_gravity(args.gravity) if args.gravity else None
    os.makedirs(args.out, exist_ok=True)

    stats = None
    if args.stats:
        if args.mode != "hdha":
            raise ValueError("--stats applies to --mode hdha only")
        if os.path.exists(args.stats):
            stats = encoding.ChannelStats.from_json(args.stats)
        else:
            images = [
                geometry.hdha_encode(encoding.load_depth(p), cam, gravity=gravity,
                                     k_neighbors=args.k_neighbors)
                for p in args.files
            ]
            stats = encoding.compute_channel_stats(images)
            stats.to_json(args.stats)

    cap = _kernels.thread_cap()
    workers = min(cap or 4, len(args.files))
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        lines = list(pool.map(
            lambda p: _encode_one(p, args, cam, gravity, stats), args.files
        ))
    for line in lines:
        print(line)
    return 0


def _cmd_arch(args) -> int:
    try:
        h, w = (int(p) for p in args.input.lower().split("x"))
    except ValueError:
        raise ValueError(f"--input must look like 600x800, got {args.input!r}") from None
    if args.report not in ("params", "shapes", "all"):
        raise ValueError(f"--report must be params, shapes, or all, got {args.report!r}")
    graph = build_architecture(args.variant, args.backbone, num_classes=args.classes,
                               depth_channels=args.depth_channels)
    propagate_shapes(graph, (3, h, w), args.rois)
    os.makedirs(args.out, exist_ok=True)
    prefix = os.path.join(args.out, f"{args.variant}_{args.backbone}")

    with open(f"{prefix}.dot", "w") as fh:
        fh.write(to_dot(graph))
    written = [f"{prefix}.dot"]
    report = count_parameters(graph)
    if args.report in ("params", "all"):
        report.to_csv(f"{prefix}_params.csv")
        written.append(f"{prefix}_params.csv")
    if args.report in ("shapes", "all"):
        with open(f"{prefix}_shapes.csv", "w") as fh:
            fh.write(shape_csv(graph))
        written.append(f"{prefix}_shapes.csv")

    print(f"{args.variant} / {args.backbone}: trainable={report.trainable:,} "
          f"fixed={report.fixed:,} total={report.total:,}")
    det = next(n for n, s in graph.nodes.items() if s.kind == "det_head")
    edge = graph.in_edges(det)[0]
    print(f"head input: {format_shape(graph.shapes[f'{edge.src}:{edge.src_port}'])}")
    for name in written:
        print(f"wrote {name}")

    if args.forward:
        filler = Lcg(args.seed + 1)
        inputs = {}
        for name, ispec in graph.inputs.items():
            if ispec.rois:
                # a deterministic spread of boxes across the image
                fr = np.array([
                    [0.0, 0.0, 0.5, 0.5],
                    [0.25, 0.25, 1.0, 1.0],
                    [0.1, 0.4, 0.9, 0.8],
                    [0.0, 0.0, 1.0, 1.0],
                ])
                inputs[name] = fr * np.array([w, h, w, h], dtype=float)
            else:
                c = ispec.channels
                inputs[name] = filler.draws(c * h * w).reshape(c, h, w)
        outputs = execute_forward(graph, inputs, seed=args.seed)
        for key in sorted(outputs):
            arr = outputs[key]
            print(f"forward {key}: shape={format_shape(arr.shape)} sum={arr.sum():.6e}")
    return 0


def _resolve_class_ids(gts) -> list[int]:
    return sorted({gt.class_id for gt in gts})


def _cmd_eval(args) -> int:
    classes = evaluation.load_classes(args.classes) if args.classes else None
    dets = evaluation.load_detections(args.dets, classes)
    gts = evaluation.load_groundtruth(args.gts, classes)
    os.makedirs(args.out, exist_ok=True)

    if args.metric == "voc":
        class_ids = _resolve_class_ids(gts)
        map_value, per_class = evaluation.mean_ap(dets, gts, class_ids, args.iou,
                                                  args.use_difficult)
        table = classes or [str(i) for i in range(max(class_ids, default=0) + 1)]
        text = evaluation.ap_csv(per_class, table, map_value)
        path = os.path.join(args.out, "voc_ap.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"mAP: {'NA' if map_value is None else f'{map_value:.6f}'}")
        print(f"wrote {path}")
        return 0

    if args.metric == "coco":
        class_ids = _resolve_class_ids(gts)
        summary = evaluation.coco_ap(dets, gts, class_ids)
        path = os.path.join(args.out, "coco_ap.csv")
        with open(path, "w") as fh:
            fh.write(evaluation.coco_csv(summary))
        ap = summary["ap"]
        print(f"AP: {'NA' if ap is None else f'{ap:.6f}'}")
        print(f"wrote {path}")
        return 0

    if args.metric in ("confusion", "confdiff"):
        if classes is None:
            raise ValueError(f"--metric {args.metric} requires --classes")
        cm = evaluation.confusion_matrix(dets, gts, classes, args.iou, args.score_thresh)
        if args.metric == "confusion":
            path = os.path.join(args.out, "confusion.csv")
            with open(path, "w") as fh:
                fh.write(cm.to_csv())
            print(f"matched={int(cm.counts.sum())} missed={int(cm.fn.sum())}")
            print(f"wrote {path}")
            return 0
        if not args.dets_b:
            raise ValueError("--metric confdiff requires --dets-b (the comparison run)")
        dets_b = evaluation.load_detections(args.dets_b, classes)
        cm_b = evaluation.confusion_matrix(dets_b, gts, classes, args.iou, args.score_thresh)
        diff = evaluation.confusion_diff(cm, cm_b)
        path = os.path.join(args.out, "confusion_diff.csv")
        with open(path, "w") as fh:
            fh.write(diff.to_csv())
        print(diff.format_text(), end="")
        print(f"wrote {path}")
        return 0

    raise ValueError(f"unknown metric {args.metric!r}, expected voc, coco, confusion, confdiff")


def _find_depth_file(depth_dir: str, image_id: str) -> str:
    for ext in (".pfm", ".pgm"):
        path = os.path.join(depth_dir, image_id + ext)
        if os.path.exists(path):
            return path
    raise ValueError(f"no depth file for image {image_id!r} under {depth_dir} "
                     f"(tried .pfm and .pgm)")


def _cmd_analyze(args) -> int:
    if args.similarity:
        maps = []
        for path in args.similarity:
            with open(path) as fh:
                maps.append(analysis.parse_heatmap_csv(fh.read()))
        score = analysis.heatmap_similarity(maps[0], maps[1])
        print(f"similarity: {score:.6f}")
        return 0
    if not args.gts or not args.depth_dir:
        raise ValueError("analyze needs --gts and --depth-dir (or --similarity A B)")
    classes = evaluation.load_classes(args.classes) if args.classes else None
    gts = evaluation.load_groundtruth(args.gts, classes)
    depth_maps = {}
    for gt in gts:
        if gt.image_id not in depth_maps:
            depth_maps[gt.image_id] = encoding.load_depth(
                _find_depth_file(args.depth_dir, gt.image_id))
    samples = analysis.collect_samples(gts, depth_maps)
    if not samples:
        raise ValueError("no usable samples: no ground-truth box holds valid depth")
    hm = analysis.build_heatmap(samples, bins_x=args.bins, bins_y=args.bins)
    os.makedirs(args.out, exist_ok=True)
    samples_path = os.path.join(args.out, "samples.csv")
    with open(samples_path, "w") as fh:
        fh.write(analysis.samples_csv(samples, classes))
    hm_path = os.path.join(args.out, "heatmap.csv")
    with open(hm_path, "w") as fh:
        fh.write(analysis.heatmap_csv(hm))
    pgm_path = os.path.join(args.out, "heatmap.pgm")
    netpbm.write_pgm8(pgm_path, analysis.heatmap_to_pgm_bytes(hm))
    r = analysis.pearson_r([s.mean_depth for s in samples], [s.area for s in samples])
    print(f"samples={len(samples)} pearson_r={r:.6f}")
    for path in (samples_path, hm_path, pgm_path):
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "encode": _cmd_encode,
    "arch": _cmd_arch,
    "eval": _cmd_eval,
    "analyze": _cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        name = exc.filename or exc
        print(f"error: missing file: {name}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GraphError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
