"""Construction of the two-stage detector variants.

Nine wirings over two backbones.  The fusion families:

* ``baseline``      RGB only.
* ``raw-EC/MC/LC``  the raw depth plane joins the RGB stream directly:
  resized and projected onto the feature map (EC), onto the pooled
  region features (MC), or flattened next to the final feature vector
  (LC).  No depth backbone.
* ``proc-EC/MC/LC`` a full second backbone runs on an encoded depth
  image and the two streams merge at the same three points.
* ``hdha-split``    three single-channel backbones, one per geometric
  channel, merge with the RGB stream before the region stage.
* ``prior-late``    two complete detector streams (each with its own
  region-proposal head) concatenated at the final feature vector.

Residual shortcuts carry no parameters, so the residual backbone is
laid out as its conv chain; projection shortcuts appear as parallel
conv branches whose outputs stay unconsumed.  Batch-norm rides on the
conv nodes it follows and is always frozen.
"""
from __future__ import annotations

from .graph import ArchGraph, LayerSpec

VARIANTS = (
    "baseline",
    "raw-EC",
    "raw-MC",
    "raw-LC",
    "proc-EC",
    "proc-MC",
    "proc-LC",
    "hdha-split",
    "prior-late",
)

BACKBONES = ("vgg16", "resnet101")

# Feature-map channels at the region stage, and the width of the
# per-region feature vector each backbone's head stack produces.
_FEAT_CHANNELS = {"vgg16": 512, "resnet101": 1024}
_HEAD_WIDTH = {"vgg16": 4096, "resnet101": 2048}

_RPN_HIDDEN = 512

# raw-LC flattens the depth plane to this square before joining the
# feature vector (64 * 64 = 4096 values).
_LC_DEPTH_SIDE = 64


def _conv(out_ch: int, k: int, stride: int = 1, pad: int = 0, bias: bool = True,
          bn: bool = False, trainable: bool = True) -> LayerSpec:
    return LayerSpec(kind="conv2d", out_channels=out_ch, kernel=k, stride=stride,
                     pad=pad, bias=bias, batch_norm=bn, trainable=trainable)


def _build_vgg16(g: ArchGraph, prefix: str, source: str) -> str:
    """The 13-conv feature extractor; the last pool stage is omitted so
    the feature stride stays 16.  Stages 1 and 2 are frozen."""
    cfg = [(1, 64, 2), (2, 128, 2), (3, 256, 3), (4, 512, 3), (5, 512, 3)]
    prev = source
    for stage, width, reps in cfg:
        trainable = stage >= 3
        for i in range(1, reps + 1):
            name = f"{prefix}/conv{stage}_{i}"
            g.add(name, _conv(width, 3, pad=1, trainable=trainable), [prev])
            prev = g.add(f"{prefix}/relu{stage}_{i}", LayerSpec(kind="relu"), [name])
        if stage < 5:
            prev = g.add(f"{prefix}/pool{stage}", LayerSpec(kind="maxpool", kernel=2, stride=2),
                         [prev])
    return prev


def _bottleneck(g: ArchGraph, name: str, source: str, planes: int, stride: int,
                project: bool, trainable: bool) -> str:
    """One residual bottleneck as a conv chain.

    The projection shortcut, when present, is a parallel 1x1 conv branch
    left unconsumed: the shortcut add itself has no parameters and the
    chain carries the dataflow.
    """
    out_ch = planes * 4
    a = g.add(f"{name}.a", _conv(planes, 1, bias=False, bn=True, trainable=trainable), [source])
    ra = g.add(f"{name}.a_relu", LayerSpec(kind="relu"), [a])
    b = g.add(f"{name}.b", _conv(planes, 3, stride=stride, pad=1, bias=False, bn=True,
                                 trainable=trainable), [ra])
    rb = g.add(f"{name}.b_relu", LayerSpec(kind="relu"), [b])
    c = g.add(f"{name}.c", _conv(out_ch, 1, bias=False, bn=True, trainable=trainable), [rb])
    if project:
        g.add(f"{name}.proj", _conv(out_ch, 1, stride=stride, bias=False, bn=True,
                                    trainable=trainable), [source])
    return g.add(f"{name}.relu", LayerSpec(kind="relu"), [c])


def _res_layer(g: ArchGraph, prefix: str, source: str, planes: int, blocks: int,
               stride: int, trainable: bool) -> str:
    prev = _bottleneck(g, f"{prefix}.b1", source, planes, stride, project=True,
                       trainable=trainable)
    for i in range(2, blocks + 1):
        prev = _bottleneck(g, f"{prefix}.b{i}", prev, planes, 1, project=False,
                           trainable=trainable)
    return prev


def _build_resnet101(g: ArchGraph, prefix: str, source: str) -> str:
    """Stem through the third residual stage (feature stride 16).

    The stem and first stage are frozen; batch-norm is frozen throughout.
    """
    g.add(f"{prefix}/conv1", _conv(64, 7, stride=2, pad=3, bias=False, bn=True,
                                   trainable=False), [source])
    r = g.add(f"{prefix}/conv1_relu", LayerSpec(kind="relu"), [f"{prefix}/conv1"])
    p = g.add(f"{prefix}/pool1", LayerSpec(kind="maxpool", kernel=3, stride=2, pad=1), [r])
    l1 = _res_layer(g, f"{prefix}/l1", p, 64, 3, 1, trainable=False)
    l2 = _res_layer(g, f"{prefix}/l2", l1, 128, 4, 2, trainable=True)
    return _res_layer(g, f"{prefix}/l3", l2, 256, 23, 2, trainable=True)


def _build_backbone(g: ArchGraph, backbone: str, prefix: str, source: str) -> str:
    if backbone == "vgg16":
        return _build_vgg16(g, prefix, source)
    return _build_resnet101(g, prefix, source)


def _build_head_stack(g: ArchGraph, backbone: str, prefix: str, source: str) -> str:
    """Per-region feature stack after pooling: fc6/fc7 for the plain
    backbone, the fourth residual stage plus pooling for the residual one."""
    if backbone == "vgg16":
        f = g.add(f"{prefix}/flatten", LayerSpec(kind="flatten"), [source])
        fc6 = g.add(f"{prefix}/fc6", LayerSpec(kind="fc", out_features=4096), [f])
        r6 = g.add(f"{prefix}/fc6_relu", LayerSpec(kind="relu"), [fc6])
        fc7 = g.add(f"{prefix}/fc7", LayerSpec(kind="fc", out_features=4096), [r6])
        return g.add(f"{prefix}/fc7_relu", LayerSpec(kind="relu"), [fc7])
    l4 = _res_layer(g, f"{prefix}/l4", source, 512, 3, 2, trainable=True)
    pool = g.add(f"{prefix}/pool", LayerSpec(kind="maxpool", kernel=4, stride=4), [l4])
    return g.add(f"{prefix}/flatten", LayerSpec(kind="flatten"), [pool])


def _add_rpn(g: ArchGraph, name: str, features: str) -> str:
    g.add(name, LayerSpec(kind="rpn_head", hidden=_RPN_HIDDEN, num_anchors=9), [features])
    return name


def _add_roi_align(g: ArchGraph, name: str, features: str, rois: str) -> str:
    return g.add(name, LayerSpec(kind="roi_align", pool_size=7, spatial_scale=1.0 / 16.0),
                 [features, rois])


def _add_det(g: ArchGraph, source: str, num_classes: int) -> str:
    return g.add("det", LayerSpec(kind="det_head", num_classes=num_classes), [source])


def _reduce_conv(g: ArchGraph, name: str, source: str, out_ch: int) -> str:
    return g.add(name, _conv(out_ch, 1), [source])


def build_architecture(
    variant: str,
    backbone: str,
    num_classes: int = 21,
    depth_channels: int | None = None,
) -> ArchGraph:
    """Assemble one detector variant as an :class:`ArchGraph`.

    ``depth_channels`` defaults to 1 for the raw variants (the depth
    plane itself) and 3 for the processed ones (an encoded depth image).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {', '.join(VARIANTS)}")
    if backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {backbone!r}, expected one of {', '.join(BACKBONES)}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2 (background plus objects), got {num_classes}")
    if depth_channels is None:
        depth_channels = 1 if variant.startswith("raw-") else 3
    if depth_channels < 1:
        raise ValueError(f"depth_channels must be >= 1, got {depth_channels}")

    g = ArchGraph(variant=variant, backbone=backbone)
    feat_ch = _FEAT_CHANNELS[backbone]

    g.add_input("rgb", channels=3)
    rgb_feat = _build_backbone(g, backbone, "rgb_bb", "rgb")

    if variant == "baseline":
        rois = g.add_input("rois", rois=True)
        _add_rpn(g, "rpn", rgb_feat)
        pooled = _add_roi_align(g, "roi_align", rgb_feat, rois)
        vec = _build_head_stack(g, backbone, "head", pooled)
        _add_det(g, vec, num_classes)
        return g

    if variant == "raw-EC":
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        rs = g.add("fuse/resize", LayerSpec(kind="bilinear_resize"), ["depth", rgb_feat])
        proj = _reduce_conv(g, "fuse/depth_proj", rs, feat_ch)
        cat = g.add("fuse/concat", LayerSpec(kind="channel_concat"), [rgb_feat, proj])
        fused = _reduce_conv(g, "fuse/reduce", cat, feat_ch)
        _add_rpn(g, "rpn", fused)
        pooled = _add_roi_align(g, "roi_align", fused, rois)
        vec = _build_head_stack(g, backbone, "head", pooled)
        _add_det(g, vec, num_classes)
        return g

    if variant == "raw-MC":
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        _add_rpn(g, "rpn", rgb_feat)
        pooled = _add_roi_align(g, "roi_align", rgb_feat, rois)
        rs = g.add("fuse/resize", LayerSpec(kind="bilinear_resize", out_size=(7, 7)), ["depth"])
        proj = _reduce_conv(g, "fuse/depth_proj", rs, feat_ch)
        rep = g.add("fuse/repeat", LayerSpec(kind="batch_repeat_concat"), [proj])
        cat = g.add("fuse/concat", LayerSpec(kind="channel_concat"), [pooled, rep])
        fused = _reduce_conv(g, "fuse/reduce", cat, feat_ch)
        vec = _build_head_stack(g, backbone, "head", fused)
        _add_det(g, vec, num_classes)
        return g

    if variant == "raw-LC":
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        _add_rpn(g, "rpn", rgb_feat)
        pooled = _add_roi_align(g, "roi_align", rgb_feat, rois)
        vec = _build_head_stack(g, backbone, "head", pooled)
        rs = g.add("fuse/resize",
                   LayerSpec(kind="bilinear_resize", out_size=(_LC_DEPTH_SIDE, _LC_DEPTH_SIDE)),
                   ["depth"])
        flat = g.add("fuse/flatten", LayerSpec(kind="flatten"), [rs])
        rep = g.add("fuse/repeat", LayerSpec(kind="batch_repeat_concat"), [flat])
        cat = g.add("head/concat", LayerSpec(kind="channel_concat"), [vec, rep])
        _add_det(g, cat, num_classes)
        return g

    if variant == "proc-EC":
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        depth_feat = _build_backbone(g, backbone, "depth_bb", "depth")
        cat = g.add("fuse/concat", LayerSpec(kind="channel_concat"), [rgb_feat, depth_feat])
        fused = _reduce_conv(g, "fuse/reduce", cat, feat_ch)
        _add_rpn(g, "rpn", fused)
        pooled = _add_roi_align(g, "roi_align", fused, rois)
        vec = _build_head_stack(g, backbone, "head", pooled)
        _add_det(g, vec, num_classes)
        return g

    if variant == "proc-MC":
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        depth_feat = _build_backbone(g, backbone, "depth_bb", "depth")
        _add_rpn(g, "rpn", rgb_feat)
        pooled_rgb = _add_roi_align(g, "roi_align", rgb_feat, rois)
        pooled_depth = _add_roi_align(g, "roi_align_depth", depth_feat, rois)
        cat = g.add("fuse/concat", LayerSpec(kind="channel_concat"), [pooled_rgb, pooled_depth])
        fused = _reduce_conv(g, "fuse/reduce", cat, feat_ch)
        vec = _build_head_stack(g, backbone, "head", fused)
        _add_det(g, vec, num_classes)
        return g

    if variant in ("proc-LC", "prior-late"):
        g.add_input("depth", channels=depth_channels)
        rois = g.add_input("rois", rois=True)
        depth_feat = _build_backbone(g, backbone, "depth_bb", "depth")
        _add_rpn(g, "rpn", rgb_feat)
        if variant == "prior-late":
            # each stream was a complete detector, so each carries its own
            # region-proposal head
            _add_rpn(g, "rpn_depth", depth_feat)
        pooled_rgb = _add_roi_align(g, "roi_align", rgb_feat, rois)
        pooled_depth = _add_roi_align(g, "roi_align_depth", depth_feat, rois)
        vec_rgb = _build_head_stack(g, backbone, "head_rgb", pooled_rgb)
        vec_depth = _build_head_stack(g, backbone, "head_depth", pooled_depth)
        cat = g.add("head/concat", LayerSpec(kind="channel_concat"), [vec_rgb, vec_depth])
        _add_det(g, cat, num_classes)
        return g

    # hdha-split: one single-channel backbone per geometric channel
    streams = []
    for chan in ("hd", "h", "a"):
        g.add_input(f"depth_{chan}", channels=1)
        streams.append(_build_backbone(g, backbone, f"{chan}_bb", f"depth_{chan}"))
    rois = g.add_input("rois", rois=True)
    cat = g.add("fuse/concat", LayerSpec(kind="channel_concat"), [rgb_feat] + streams)
    fused = _reduce_conv(g, "fuse/reduce", cat, feat_ch)
    _add_rpn(g, "rpn", fused)
    pooled = _add_roi_align(g, "roi_align", fused, rois)
    vec = _build_head_stack(g, backbone, "head", pooled)
    _add_det(g, vec, num_classes)
    return g
