"""Scene statistics linking object distance to apparent size.

From ground-truth boxes and their depth maps we sample (average depth,
box area) pairs, accumulate them into 2-D histograms scaled to each
dataset's own range, and compare histograms across datasets by cosine
similarity of the mass-normalized cells.  Pinhole projection makes
apparent area shrink with distance, so the depth-area correlation of a
sane scene collection is strongly negative.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .encoding import DepthMap, quantize_u8
from .evaluation import GroundTruth


@dataclass(frozen=True)
class DepthSizeSample:
    image_id: str
    class_id: int
    mean_depth: float
    area: float


@dataclass
class Heatmap2D:
    """Counts over a (depth, area) grid.

    ``x_edges`` bound the depth axis (columns), ``y_edges`` the area axis
    (rows): ``counts[i, j]`` covers ``y_edges[i]..y_edges[i+1]`` by
    ``x_edges[j]..x_edges[j+1]``.  The upper edge of each axis is
    inclusive, so every in-range sample lands in exactly one cell.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        ny, nx = self.counts.shape
        if len(self.x_edges) != nx + 1 or len(self.y_edges) != ny + 1:
            raise ValueError("edge arrays do not frame the count grid")

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def collect_samples(
    gts: list[GroundTruth],
    depth_maps: dict[str, DepthMap],
) -> list[DepthSizeSample]:
    """One (mean depth, area) sample per ground-truth box.

    The depth average runs over the valid pixels inside the box (corners
    rounded outward, clipped to the image); boxes with no valid depth
    yield no sample.  Every referenced image must be present.
    """
    samples = []
    for gt in gts:
        if gt.image_id not in depth_maps:
            raise ValueError(f"no depth map for image {gt.image_id!r}")
        dm = depth_maps[gt.image_id]
        x1 = max(int(math.floor(gt.box.x1)), 0)
        y1 = max(int(math.floor(gt.box.y1)), 0)
        x2 = min(int(math.ceil(gt.box.x2)), dm.width)
        y2 = min(int(math.ceil(gt.box.y2)), dm.height)
        if x2 <= x1 or y2 <= y1:
            continue
        window_valid = dm.valid[y1:y2, x1:x2]
        if not window_valid.any():
            continue
        depths = dm.values[y1:y2, x1:x2][window_valid]
        samples.append(
            DepthSizeSample(
                image_id=gt.image_id,
                class_id=gt.class_id,
                mean_depth=float(depths.mean()),
                area=gt.box.area,
            )
        )
    return samples


def _axis_edges(values: np.ndarray, bins: int, rng: tuple[float, float] | None) -> np.ndarray:
    lo, hi = (float(values.min()), float(values.max())) if rng is None else rng
    if not hi >= lo:
        raise ValueError(f"bad axis range ({lo}, {hi})")
    if hi == lo:
        # degenerate axis: a single bin holds everything
        return np.array([lo, lo + 1.0])
    return np.linspace(lo, hi, bins + 1)


def _bin_index(v: float, edges: np.ndarray) -> int | None:
    lo, hi = edges[0], edges[-1]
    if v < lo or v > hi:
        return None
    n = len(edges) - 1
    if v == hi:
        return n - 1
    return min(int((v - lo) / (hi - lo) * n), n - 1)


def build_heatmap(
    samples: list[DepthSizeSample],
    bins_x: int = 20,
    bins_y: int = 20,
    x_range: tuple[float, float] | None = None,
    y_range: tuple[float, float] | None = None,
) -> Heatmap2D:
    """Histogram of samples over depth (x) and box area (y).

    Axis ranges default to the sample min/max, so two datasets get their
    own local scales; pass explicit ranges to compare on a shared grid.
    Samples outside an explicit range are dropped; with default ranges
    every sample is counted.
    """
    if not samples:
        raise ValueError("cannot build a heatmap from zero samples")
    if bins_x < 1 or bins_y < 1:
        raise ValueError(f"bin counts must be >= 1, got {bins_x}x{bins_y}")
    xs = np.array([s.mean_depth for s in samples])
    ys = np.array([s.area for s in samples])
    x_edges = _axis_edges(xs, bins_x, x_range)
    y_edges = _axis_edges(ys, bins_y, y_range)
    counts = np.zeros((len(y_edges) - 1, len(x_edges) - 1))
    for x, y in zip(xs, ys):
        i = _bin_index(y, y_edges)
        j = _bin_index(x, x_edges)
        if i is not None and j is not None:
            counts[i, j] += 1
    return Heatmap2D(x_edges=x_edges, y_edges=y_edges, counts=counts)


def heatmap_similarity(a: Heatmap2D, b: Heatmap2D) -> float:
    """Cosine similarity of the two grids after L1 mass normalization.

    Grid shapes must match; axis ranges may differ (each heatmap lives
    on its own local scale).  1.0 means identical mass distribution.
    """
    if a.counts.shape != b.counts.shape:
        raise ValueError(
            f"heatmap grids differ: {a.counts.shape} vs {b.counts.shape}"
        )
    if a.total == 0 or b.total == 0:
        raise ValueError("cannot compare an empty heatmap")
    va = (a.counts / a.total).ravel()
    vb = (b.counts / b.total).ravel()
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))


def pearson_r(x, y) -> float:
    """Pearson correlation; needs two or more pairs and spread on both axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson_r needs two equal-length 1-D arrays")
    if len(x) < 2:
        raise ValueError("pearson_r needs at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0:
        raise ValueError("pearson_r undefined for a constant sequence")
    return float((dx * dy).sum() / denom)


def samples_csv(samples: list[DepthSizeSample], classes: list[str] | None = None) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["image_id", "class", "mean_depth", "area"])
    for s in samples:
        name = classes[s.class_id] if classes and 0 <= s.class_id < len(classes) else s.class_id
        writer.writerow([s.image_id, name, f"{s.mean_depth:.6f}", f"{s.area:.6f}"])
    return out.getvalue()


def heatmap_csv(hm: Heatmap2D) -> str:
    """Grid as CSV; the two header rows carry the bin edges."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["x_edges", *(f"{e!r}" for e in hm.x_edges.tolist())])
    writer.writerow(["y_edges", *(f"{e!r}" for e in hm.y_edges.tolist())])
    for row in hm.counts:
        writer.writerow([f"{v!r}" for v in row.tolist()])
    return out.getvalue()


def parse_heatmap_csv(text: str) -> Heatmap2D:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 3 or rows[0][0] != "x_edges" or rows[1][0] != "y_edges":
        raise ValueError("not a heatmap CSV: expected x_edges and y_edges header rows")
    x_edges = np.array([float(v) for v in rows[0][1:]])
    y_edges = np.array([float(v) for v in rows[1][1:]])
    counts = np.array([[float(v) for v in row] for row in rows[2:]])
    return Heatmap2D(x_edges=x_edges, y_edges=y_edges, counts=counts)


def heatmap_to_pgm_bytes(hm: Heatmap2D) -> np.ndarray:
    """Counts scaled to 8-bit for a quick visual render (max count = 255)."""
    peak = hm.counts.max()
    if peak == 0:
        return np.zeros(hm.counts.shape, dtype=np.uint8)
    return quantize_u8(hm.counts / peak * 255.0)
