"""Dataflow graphs describing two-stage detector architectures.

A graph is a DAG of typed layer nodes.  Nodes are added in construction
order, and every edge must point at an already-existing node, so
construction order is always a valid execution order.  Shape
propagation walks the graph symbolically and annotates every edge; the
parameter counter and the numeric executor both build on that.

Tensor shape conventions: image tensors are ``(C, H, W)`` before the
region stage and ``(N, C, H, W)`` after it, feature vectors are
``(F,)`` or ``(N, F)``, and region boxes are ``(N, 4)`` as
``x1, y1, x2, y2`` in input-image pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

Shape = tuple[int, ...]


class GraphError(Exception):
    """Base for graph construction and propagation failures."""


class StructuralError(GraphError):
    """Wiring or shape inconsistency, reported against a node or edge."""


class StateError(GraphError):
    """Operation needs shapes propagated first."""


KINDS = frozenset(
    {
        "conv2d",
        "relu",
        "maxpool",
        "fc",
        "bilinear_resize",
        "channel_concat",
        "batch_repeat_concat",
        "flatten",
        "roi_align",
        "rpn_head",
        "det_head",
    }
)


@dataclass
class LayerSpec:
    """One layer.  Only the fields relevant to ``kind`` are read.

    ``trainable`` marks whether the layer's weights would update during
    training; frozen layers still hold (fixed) parameters.  A conv2d with
    ``batch_norm`` carries a frozen batch-norm after it, contributing
    two fixed parameters per output channel.
    """

    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    bias: bool = True
    batch_norm: bool = False
    out_features: int = 0
    out_size: tuple[int, int] | None = None
    pool_size: int = 7
    spatial_scale: float = 1.0 / 16.0
    hidden: int = 512
    num_anchors: int = 9
    num_classes: int = 0
    trainable: bool = True

    def validate(self, name: str) -> None:
        if self.kind not in KINDS:
            raise StructuralError(f"node {name}: unknown kind {self.kind!r}")
        need_pos = {
            "conv2d": [("out_channels", self.out_channels), ("kernel", self.kernel)],
            "maxpool": [("kernel", self.kernel)],
            "fc": [("out_features", self.out_features)],
            "rpn_head": [("hidden", self.hidden), ("num_anchors", self.num_anchors)],
            "det_head": [("num_classes", self.num_classes)],
            "roi_align": [("pool_size", self.pool_size)],
        }
        for field_name, value in need_pos.get(self.kind, []):
            if value < 1:
                raise StructuralError(f"node {name}: {self.kind} needs {field_name} >= 1")
        if self.kind in ("conv2d", "maxpool") and self.stride < 1:
            raise StructuralError(f"node {name}: stride must be >= 1")
        if self.kind in ("conv2d", "maxpool") and self.pad < 0:
            raise StructuralError(f"node {name}: pad must be >= 0")
        if self.kind == "bilinear_resize" and self.out_size is not None:
            if self.out_size[0] < 1 or self.out_size[1] < 1:
                raise StructuralError(f"node {name}: resize target must be >= 1")

    def output_ports(self) -> tuple[str, ...]:
        if self.kind == "rpn_head":
            return ("objectness", "deltas")
        if self.kind == "det_head":
            return ("scores", "deltas")
        return ("out",)

    def arity(self) -> tuple[int, int]:
        """(min, max) accepted input count."""
        if self.kind == "channel_concat":
            return (2, 64)
        if self.kind == "roi_align":
            return (2, 2)
        if self.kind == "bilinear_resize":
            return (1, 2) if self.out_size is None else (1, 1)
        return (1, 1)


@dataclass(frozen=True)
class Edge:
    src: str
    src_port: str
    dst: str
    dst_slot: int

    def label(self) -> str:
        return f"{self.src}:{self.src_port}->{self.dst}[{self.dst_slot}]"


@dataclass
class InputSpec:
    """Graph entry point: an image plane, a feature tensor, or RoI boxes."""

    channels: int = 0
    rois: bool = False
    shape: Shape | None = None


@dataclass
class ArchGraph:
    variant: str = "custom"
    backbone: str = ""
    nodes: dict[str, LayerSpec] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    inputs: dict[str, InputSpec] = field(default_factory=dict)
    shapes: dict[str, Shape] | None = None
    num_rois: int | None = None

    def add_input(self, name: str, channels: int = 0, rois: bool = False,
                  shape: Shape | None = None) -> str:
        if name in self.inputs or name in self.nodes:
            raise StructuralError(f"duplicate name {name!r}")
        self.inputs[name] = InputSpec(channels=channels, rois=rois, shape=shape)
        return name

    def add(self, name: str, spec: LayerSpec, inputs: list[str | tuple[str, str]]) -> str:
        """Add a node wired to existing producers.

        Each entry of ``inputs`` is a producer name, or ``(name, port)``
        for multi-output producers.  Keeping edges pointed backward makes
        construction order a valid execution order.
        """
        if name in self.nodes or name in self.inputs:
            raise StructuralError(f"duplicate name {name!r}")
        spec.validate(name)
        lo, hi = spec.arity()
        if not lo <= len(inputs) <= hi:
            raise StructuralError(
                f"node {name}: {spec.kind} takes {lo}..{hi} inputs, got {len(inputs)}"
            )
        resolved: list[Edge] = []
        for slot, item in enumerate(inputs):
            src, port = item if isinstance(item, tuple) else (item, "out")
            if src in self.inputs:
                if port != "out":
                    raise StructuralError(f"node {name}: graph input {src!r} has no port {port!r}")
            elif src in self.nodes:
                if port not in self.nodes[src].output_ports():
                    raise StructuralError(f"node {name}: {src!r} has no output port {port!r}")
            else:
                raise StructuralError(f"node {name}: unknown input {src!r}")
            resolved.append(Edge(src=src, src_port=port, dst=name, dst_slot=slot))
        self.nodes[name] = spec
        self.edges.extend(resolved)
        self.shapes = None
        return name

    def in_edges(self, name: str) -> list[Edge]:
        found = [e for e in self.edges if e.dst == name]
        found.sort(key=lambda e: e.dst_slot)
        return found

    def consumers(self, name: str, port: str) -> list[Edge]:
        return [e for e in self.edges if e.src == name and e.src_port == port]

    def leaf_ports(self) -> list[tuple[str, str]]:
        """Output ports nothing consumes, in construction order."""
        out = []
        for name, spec in self.nodes.items():
            for port in spec.output_ports():
                if not self.consumers(name, port):
                    out.append((name, port))
        return out

    def validate(self) -> None:
        heads = [n for n, s in self.nodes.items() if s.kind == "det_head"]
        if len(heads) != 1:
            raise StructuralError(f"graph must contain exactly one det_head, found {len(heads)}")
        for name in self.nodes:
            edges = self.in_edges(name)
            slots = [e.dst_slot for e in edges]
            if slots != list(range(len(slots))):
                raise StructuralError(f"node {name}: input slots not contiguous")

    def shape_of(self, name: str, port: str = "out") -> Shape:
        if self.shapes is None:
            raise StateError("shapes not propagated yet, call propagate_shapes first")
        return self.shapes[f"{name}:{port}"]


def _conv_extent(n: int, kernel: int, stride: int, pad: int, where: str) -> int:
    out = (n + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise StructuralError(f"{where}: spatial extent collapses to {out} "
                              f"(in={n}, k={kernel}, s={stride}, p={pad})")
    return out


def _node_output_shapes(
    name: str, spec: LayerSpec, in_shapes: list[Shape], num_rois: int
) -> dict[str, Shape]:
    kind = spec.kind

    def spatial(shape: Shape) -> tuple[int, int]:
        return shape[-2], shape[-1]

    if kind in ("conv2d", "maxpool"):
        (s,) = in_shapes
        if len(s) not in (3, 4):
            raise StructuralError(f"node {name}: {kind} needs (C,H,W) or (N,C,H,W), got {s}")
        h = _conv_extent(s[-2], spec.kernel, spec.stride, spec.pad, f"node {name}")
        w = _conv_extent(s[-1], spec.kernel, spec.stride, spec.pad, f"node {name}")
        c = spec.out_channels if kind == "conv2d" else s[-3]
        return {"out": s[:-3] + (c, h, w)}
    if kind == "relu":
        return {"out": in_shapes[0]}
    if kind == "fc":
        (s,) = in_shapes
        if len(s) not in (1, 2):
            raise StructuralError(f"node {name}: fc needs (F,) or (N,F), got {s}")
        return {"out": s[:-1] + (spec.out_features,)}
    if kind == "bilinear_resize":
        s = in_shapes[0]
        if len(s) not in (3, 4):
            raise StructuralError(f"node {name}: resize needs (C,H,W) or (N,C,H,W), got {s}")
        if spec.out_size is not None:
            oh, ow = spec.out_size
        else:
            ref = in_shapes[1]
            if len(ref) < 2:
                raise StructuralError(f"node {name}: resize reference must be spatial, got {ref}")
            oh, ow = spatial(ref)
        return {"out": s[:-2] + (oh, ow)}
    if kind == "channel_concat":
        ranks = {len(s) for s in in_shapes}
        if len(ranks) != 1:
            raise StructuralError(f"node {name}: concat inputs have mixed ranks {in_shapes}")
        rank = ranks.pop()
        if rank == 2:
            axis = 1
        elif rank == 3:
            axis = 0
        elif rank == 4:
            axis = 1
        else:
            raise StructuralError(f"node {name}: concat needs rank 2..4, got rank {rank}")
        base = in_shapes[0]
        for i, s in enumerate(in_shapes[1:], start=1):
            if s[:axis] + s[axis + 1 :] != base[:axis] + base[axis + 1 :]:
                raise StructuralError(
                    f"node {name}: concat input {i} shape {s} incompatible with {base}"
                )
        total = sum(s[axis] for s in in_shapes)
        return {"out": base[:axis] + (total,) + base[axis + 1 :]}
    if kind == "batch_repeat_concat":
        (s,) = in_shapes
        if len(s) not in (1, 3):
            raise StructuralError(f"node {name}: batch repeat needs (F,) or (C,H,W), got {s}")
        return {"out": (num_rois,) + s}
    if kind == "flatten":
        (s,) = in_shapes
        if len(s) == 3:
            return {"out": (s[0] * s[1] * s[2],)}
        if len(s) == 4:
            return {"out": (s[0], s[1] * s[2] * s[3])}
        raise StructuralError(f"node {name}: flatten needs rank 3 or 4, got {s}")
    if kind == "roi_align":
        feat, rois = in_shapes
        if len(feat) != 3:
            raise StructuralError(f"node {name}: roi_align features must be (C,H,W), got {feat}")
        if len(rois) != 2 or rois[1] != 4:
            raise StructuralError(f"node {name}: roi_align boxes must be (N,4), got {rois}")
        return {"out": (rois[0], feat[0], spec.pool_size, spec.pool_size)}
    if kind == "rpn_head":
        (s,) = in_shapes
        if len(s) != 3:
            raise StructuralError(f"node {name}: rpn_head needs (C,H,W), got {s}")
        return {
            "objectness": (2 * spec.num_anchors, s[1], s[2]),
            "deltas": (4 * spec.num_anchors, s[1], s[2]),
        }
    if kind == "det_head":
        (s,) = in_shapes
        if len(s) != 2:
            raise StructuralError(f"node {name}: det_head needs (N,F), got {s}")
        return {
            "scores": (s[0], spec.num_classes),
            "deltas": (s[0], 4 * spec.num_classes),
        }
    raise StructuralError(f"node {name}: unknown kind {kind!r}")


def propagate_shapes(graph: ArchGraph, input_shape: Shape, num_rois: int) -> dict[str, Shape]:
    """Annotate every output port with its tensor shape.

    ``input_shape`` is the ``(C, H, W)`` of the primary image input; every
    other image-plane input shares its spatial extent, and RoI inputs
    become ``(num_rois, 4)``.  The result maps ``"node:port"`` to a shape
    and is also stored on ``graph.shapes``.
    """
    if len(input_shape) != 3 or any(d < 1 for d in input_shape):
        raise ValueError(f"input shape must be (C, H, W) with positive extents, got {input_shape}")
    if num_rois < 1:
        raise ValueError(f"num_rois must be >= 1, got {num_rois}")
    graph.validate()
    _, ih, iw = input_shape
    shapes: dict[str, Shape] = {}
    primary_seen = False
    for name, ispec in graph.inputs.items():
        if ispec.rois:
            shapes[f"{name}:out"] = (num_rois, 4)
        elif ispec.shape is not None:
            shapes[f"{name}:out"] = ispec.shape
        else:
            if not primary_seen:
                if ispec.channels != input_shape[0]:
                    raise StructuralError(
                        f"input {name!r} declares {ispec.channels} channels, "
                        f"input shape has {input_shape[0]}"
                    )
                primary_seen = True
            shapes[f"{name}:out"] = (ispec.channels, ih, iw)
    for name, spec in graph.nodes.items():
        in_shapes = []
        for edge in graph.in_edges(name):
            key = f"{edge.src}:{edge.src_port}"
            if key not in shapes:
                raise StructuralError(f"edge {edge.label()}: producer shape unknown")
            in_shapes.append(shapes[key])
        for port, shape in _node_output_shapes(name, spec, in_shapes, num_rois).items():
            shapes[f"{name}:{port}"] = shape
    graph.shapes = shapes
    graph.num_rois = num_rois
    return shapes
