"""Deterministic numeric execution of an architecture graph.

The executor exists to exercise wiring end to end: every weight comes
from a seeded 64-bit linear congruential generator, so a forward pass
is a pure function of (graph, inputs, seed) and bitwise reproducible.

Generator: ``x' = (6364136223846793005 * x + 1442695040888963407) mod 2^64``,
seeded directly with ``seed``.  Each successive state maps to a weight
via ``0.2 * (x / 2^64) - 0.1``, i.e. uniform [-0.1, 0.1).  Weights are
drawn in node construction order; within a node, each weight tensor is
filled in C (row-major) order, weights before the bias.  Conv weights
are ``(c_out, c_in, k, k)``, fc weights ``(n_out, n_in)``; the proposal
head draws its 3x3 conv, then the objectness conv, then the delta conv;
the detection head draws the score map then the delta map.  Frozen
layers draw like any other; frozen batch-norm executes as identity and
draws nothing.

Construction order is topological by construction (edges always point
backward), so nodes execute in that same order and each node's weights
are freed right after use.
"""
from __future__ import annotations

import numpy as np

from .graph import ArchGraph, LayerSpec, StructuralError, propagate_shapes

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
_M64 = 1 << 64


def _affine_power(n: int) -> tuple[int, int]:
    """Coefficients (a, c) such that advancing n steps is x -> a*x + c."""
    a, c = LCG_A, LCG_C
    ra, rc = 1, 0
    while n:
        if n & 1:
            ra = (a * ra) % _M64
            rc = (a * rc + c) % _M64
        c = (a * c + c) % _M64
        a = (a * a) % _M64
        n >>= 1
    return ra, rc


class Lcg:
    """Sequential generator with vectorized block fills."""

    def __init__(self, seed: int):
        self.state = seed % _M64

    def draws(self, n: int) -> np.ndarray:
        """The next n values in [-0.1, 0.1) as float64."""
        if n == 0:
            return np.empty(0)
        states = np.empty(n, dtype=np.uint64)
        states[0] = (LCG_A * self.state + LCG_C) % _M64
        filled = 1
        while filled < n:
            span = min(filled, n - filled)
            a, c = _affine_power(filled)
            block = states[filled : filled + span]
            np.multiply(states[:span], np.uint64(a), out=block)
            np.add(block, np.uint64(c), out=block)
            filled += span
        a, c = _affine_power(n)
        self.state = (a * self.state + c) % _M64
        u = states.astype(np.float64)
        np.multiply(u, 2.0**-64, out=u)
        np.multiply(u, 0.2, out=u)
        np.subtract(u, 0.1, out=u)
        return u


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
            stride: int, pad: int) -> np.ndarray:
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    k = w.shape[-1]
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    n, _, oh, ow = view.shape[:4]
    # im2col: one matmul per batch keeps the contraction in BLAS
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, -1)
    out = (cols @ w.reshape(w.shape[0], -1).T).transpose(0, 2, 1).reshape(
        n, w.shape[0], oh, ow)
    if b is not None:
        out = out + b[None, :, None, None]
    return out[0] if squeeze else out


def _maxpool(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                   constant_values=-np.inf)
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    out = view.max(axis=(-2, -1))
    return out[0] if squeeze else out


def _bilinear_resize(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    # half-pixel sampling: output center i maps to (i + 0.5) * in/out - 0.5
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    ih, iw = x.shape[-2:]
    ys = np.clip((np.arange(oh) + 0.5) * (ih / oh) - 0.5, 0.0, ih - 1.0)
    xs = np.clip((np.arange(ow) + 0.5) * (iw / ow) - 0.5, 0.0, iw - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    wy = (ys - y0)[None, None, :, None]
    wx = (xs - x0)[None, None, None, :]
    top = x[:, :, y0][:, :, :, x0] * (1 - wx) + x[:, :, y0][:, :, :, x1] * wx
    bot = x[:, :, y1][:, :, :, x0] * (1 - wx) + x[:, :, y1][:, :, :, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[0] if squeeze else out


def _bilinear_at(feat: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C,H,W) at float coords; arrays ys/xs share a shape."""
    h, w = feat.shape[-2:]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    v00 = feat[:, y0, x0]
    v01 = feat[:, y0, x1]
    v10 = feat[:, y1, x0]
    v11 = feat[:, y1, x1]
    return (v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx
            + v10 * wy * (1 - wx) + v11 * wy * wx)


def _roi_align(feat: np.ndarray, rois: np.ndarray, pool: int, scale: float) -> np.ndarray:
    # one bilinear sample per bin, taken at the bin center
    n = rois.shape[0]
    c = feat.shape[0]
    out = np.empty((n, c, pool, pool))
    grid = (np.arange(pool) + 0.5) / pool
    for i in range(n):
        x1, y1, x2, y2 = rois[i] * scale
        ys = y1 + grid * (y2 - y1)
        xs = x1 + grid * (x2 - x1)
        yy = np.repeat(ys, pool)
        xx = np.tile(xs, pool)
        out[i] = _bilinear_at(feat, yy, xx).reshape(c, pool, pool)
    return out


def _draw_node(lcg: Lcg, spec: LayerSpec, in_shapes: list) -> dict[str, np.ndarray]:
    kind = spec.kind
    if kind == "conv2d":
        c_in = in_shapes[0][-3]
        k = spec.kernel
        w = lcg.draws(k * k * c_in * spec.out_channels).reshape(
            spec.out_channels, c_in, k, k)
        b = lcg.draws(spec.out_channels) if spec.bias else None
        return {"w": w, "b": b}
    if kind == "fc":
        n_in = in_shapes[0][-1]
        w = lcg.draws(n_in * spec.out_features).reshape(spec.out_features, n_in)
        b = lcg.draws(spec.out_features)
        return {"w": w, "b": b}
    if kind == "rpn_head":
        c_in = in_shapes[0][-3]
        hid, na = spec.hidden, spec.num_anchors
        return {
            "conv_w": lcg.draws(9 * c_in * hid).reshape(hid, c_in, 3, 3),
            "conv_b": lcg.draws(hid),
            "obj_w": lcg.draws(hid * 2 * na).reshape(2 * na, hid, 1, 1),
            "obj_b": lcg.draws(2 * na),
            "del_w": lcg.draws(hid * 4 * na).reshape(4 * na, hid, 1, 1),
            "del_b": lcg.draws(4 * na),
        }
    if kind == "det_head":
        n_in = in_shapes[0][-1]
        nc = spec.num_classes
        return {
            "score_w": lcg.draws(n_in * nc).reshape(nc, n_in),
            "score_b": lcg.draws(nc),
            "del_w": lcg.draws(n_in * 4 * nc).reshape(4 * nc, n_in),
            "del_b": lcg.draws(4 * nc),
        }
    return {}


def _run_node(spec: LayerSpec, params: dict, xs: list[np.ndarray],
              num_rois: int) -> dict[str, np.ndarray]:
    kind = spec.kind
    if kind == "conv2d":
        return {"out": _conv2d(xs[0], params["w"], params["b"], spec.stride, spec.pad)}
    if kind == "relu":
        return {"out": np.maximum(xs[0], 0.0)}
    if kind == "maxpool":
        return {"out": _maxpool(xs[0], spec.kernel, spec.stride, spec.pad)}
    if kind == "fc":
        return {"out": xs[0] @ params["w"].T + params["b"]}
    if kind == "bilinear_resize":
        if spec.out_size is not None:
            oh, ow = spec.out_size
        else:
            oh, ow = xs[1].shape[-2:]
        return {"out": _bilinear_resize(xs[0], oh, ow)}
    if kind == "channel_concat":
        axis = {2: 1, 3: 0, 4: 1}[xs[0].ndim]
        return {"out": np.concatenate(xs, axis=axis)}
    if kind == "batch_repeat_concat":
        return {"out": np.repeat(xs[0][None], num_rois, axis=0)}
    if kind == "flatten":
        x = xs[0]
        if x.ndim == 3:
            return {"out": x.reshape(-1)}
        return {"out": x.reshape(x.shape[0], -1)}
    if kind == "roi_align":
        return {"out": _roi_align(xs[0], xs[1], spec.pool_size, spec.spatial_scale)}
    if kind == "rpn_head":
        hidden = np.maximum(_conv2d(xs[0], params["conv_w"], params["conv_b"], 1, 1), 0.0)
        obj = _conv2d(hidden, params["obj_w"], params["obj_b"], 1, 0)
        deltas = _conv2d(hidden, params["del_w"], params["del_b"], 1, 0)
        return {"objectness": obj, "deltas": deltas}
    if kind == "det_head":
        x = xs[0]
        return {
            "scores": x @ params["score_w"].T + params["score_b"],
            "deltas": x @ params["del_w"].T + params["del_b"],
        }
    raise StructuralError(f"cannot execute kind {kind!r}")


def execute_forward(graph: ArchGraph, inputs: dict[str, np.ndarray],
                    seed: int = 0) -> dict[str, np.ndarray]:
    """Run the graph on concrete tensors with seeded weights.

    ``inputs`` must supply every graph input by name: image planes as
    float ``(C, H, W)``, RoIs as ``(N, 4)``.  Returns the unconsumed
    output ports keyed ``"node:port"``.  Every produced tensor is checked
    against the propagated shape table.
    """
    missing = set(graph.inputs) - set(inputs)
    extra = set(inputs) - set(graph.inputs)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing inputs: {sorted(missing)}")
        if extra:
            parts.append(f"unexpected inputs: {sorted(extra)}")
        raise StructuralError("; ".join(parts))

    num_rois = 1
    primary_shape = None
    for name, ispec in graph.inputs.items():
        arr = np.asarray(inputs[name], dtype=np.float64)
        if ispec.rois:
            num_rois = arr.shape[0]
        elif primary_shape is None and ispec.shape is None:
            if arr.ndim != 3:
                raise StructuralError(f"input {name!r} must be (C, H, W), got {arr.shape}")
            primary_shape = arr.shape
    if primary_shape is None:
        raise StructuralError("graph has no image input")
    shapes = propagate_shapes(graph, primary_shape, num_rois)

    values: dict[str, np.ndarray] = {}
    pending: dict[str, int] = {}
    for name, ispec in graph.inputs.items():
        arr = np.asarray(inputs[name], dtype=np.float64)
        want = shapes[f"{name}:out"]
        if arr.shape != want:
            raise StructuralError(f"input {name!r} has shape {arr.shape}, expected {want}")
        values[f"{name}:out"] = arr
        pending[f"{name}:out"] = len(graph.consumers(name, "out"))

    leaves = {f"{n}:{p}" for n, p in graph.leaf_ports()}
    lcg = Lcg(seed)
    for name, spec in graph.nodes.items():
        edges = graph.in_edges(name)
        in_shapes = [shapes[f"{e.src}:{e.src_port}"] for e in edges]
        params = _draw_node(lcg, spec, in_shapes)
        xs = [values[f"{e.src}:{e.src_port}"] for e in edges]
        outs = _run_node(spec, params, xs, num_rois)
        del params
        for port, arr in outs.items():
            key = f"{name}:{port}"
            if arr.shape != shapes[key]:
                raise StructuralError(
                    f"executor produced {arr.shape} at {key}, propagation said {shapes[key]}"
                )
            values[key] = arr
            pending[key] = len(graph.consumers(name, port))
        for e in edges:
            key = f"{e.src}:{e.src_port}"
            pending[key] -= 1
            if pending[key] == 0 and key not in leaves:
                del values[key]
    return {key: values[key] for key in sorted(leaves)}
