"""Text exports of an architecture graph: Graphviz DOT and a shape table.

Both walk the graph in construction order, so exporting an unchanged
graph twice yields byte-identical text.
"""
from __future__ import annotations

import csv
import io

from .graph import ArchGraph, LayerSpec, Shape, StateError


def format_shape(shape: Shape) -> str:
    return "x".join(str(d) for d in shape)


def _node_label(name: str, spec: LayerSpec) -> str:
    kind = spec.kind
    detail = ""
    if kind == "conv2d":
        detail = f" {spec.kernel}x{spec.kernel}/{spec.stride} -> {spec.out_channels}"
        if spec.batch_norm:
            detail += " +bn"
        if not spec.trainable:
            detail += " (frozen)"
    elif kind == "maxpool":
        detail = f" {spec.kernel}x{spec.kernel}/{spec.stride}"
    elif kind == "fc":
        detail = f" -> {spec.out_features}"
        if not spec.trainable:
            detail += " (frozen)"
    elif kind == "bilinear_resize":
        detail = " -> match" if spec.out_size is None else f" -> {spec.out_size[0]}x{spec.out_size[1]}"
    elif kind == "roi_align":
        detail = f" {spec.pool_size}x{spec.pool_size}"
    elif kind == "rpn_head":
        detail = f" hidden={spec.hidden} anchors={spec.num_anchors}"
    elif kind == "det_head":
        detail = f" classes={spec.num_classes}"
    return f"{name}\\n{kind}{detail}"


def to_dot(graph: ArchGraph) -> str:
    """Graphviz source for the graph; edges carry shapes when propagated."""
    out = io.StringIO()
    out.write("digraph architecture {\n")
    out.write(f'  label="{graph.variant} / {graph.backbone}";\n')
    out.write("  rankdir=TB;\n")
    out.write('  node [shape=box, fontsize=10];\n')
    for name in graph.inputs:
        out.write(f'  "{name}" [shape=ellipse, label="{name}"];\n')
    for name, spec in graph.nodes.items():
        out.write(f'  "{name}" [label="{_node_label(name, spec)}"];\n')
    for edge in graph.edges:
        attrs = []
        if edge.src_port != "out":
            attrs.append(f'taillabel="{edge.src_port}"')
        if graph.shapes is not None:
            attrs.append(f'label="{format_shape(graph.shapes[f"{edge.src}:{edge.src_port}"])}"')
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        out.write(f'  "{edge.src}" -> "{edge.dst}"{suffix};\n')
    out.write("}\n")
    return out.getvalue()


def _det_head_name(graph: ArchGraph) -> str | None:
    for name, spec in graph.nodes.items():
        if spec.kind == "det_head":
            return name
    return None


def shape_rows(graph: ArchGraph) -> list[tuple[str, Shape]]:
    """Named shapes: the graph inputs, landmark tensors, then every edge.

    Landmarks: ``head_input`` (what feeds the detection head), ``fused``
    and ``reduced`` (the fusion concat and its projection) when present.
    """
    if graph.shapes is None:
        raise StateError("shape table needs propagated shapes")
    rows: list[tuple[str, Shape]] = []
    for name in graph.inputs:
        rows.append((f"input_{name}", graph.shapes[f"{name}:out"]))
    det = _det_head_name(graph)
    if det is not None:
        edge = graph.in_edges(det)[0]
        rows.append(("head_input", graph.shapes[f"{edge.src}:{edge.src_port}"]))
    for landmark, node in (("fused", "fuse/concat"), ("reduced", "fuse/reduce")):
        if node in graph.nodes:
            rows.append((landmark, graph.shapes[f"{node}:out"]))
    for edge in graph.edges:
        rows.append((edge.label(), graph.shapes[f"{edge.src}:{edge.src_port}"]))
    return rows


def shape_csv(graph: ArchGraph) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["name", "shape"])
    for name, shape in shape_rows(graph):
        writer.writerow([name, format_shape(shape)])
    return out.getvalue()
