"""Detection-quality metrics: IoU, NMS, average precision, confusion.

Two AP protocols are provided.  The 11-point protocol ranks detections
by score, credits a detection when it is the best-overlap match of an
unmatched ground-truth box of its class at the IoU threshold, skips
ground truth flagged difficult, and averages interpolated precision at
recalls 0, 0.1, .., 1.  The multi-threshold protocol sweeps IoU 0.50 to
0.95 in steps of 0.05, interpolates precision at 101 recall points, and
also reports size-bucketed values where ground truth outside the bucket
is ignored rather than counted against recall.

The confusion matrix is class-agnostic at match time: each ground-truth
box, in input order, takes the highest-scoring unmatched detection that
overlaps it at the IoU threshold, whatever class that detection claims.
Unmatched ground truth lands in a trailing false-negative column.

Deterministic ordering everywhere: detections sort by score descending
with ties broken by image id then box coordinates ascending.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .netpbm import ParseError

# (10 + i) / 20 rather than 0.5 + 0.05 * i: each threshold must be the
# correctly rounded double of its decimal so that ratio-valued IoUs and
# recalls compare exactly against it
COCO_THRESHOLDS = tuple((10 + i) / 20 for i in range(10))

# size buckets by box area in squared pixels: small < 32^2,
# 32^2 <= medium <= 96^2, large > 96^2
_SMALL_MAX = 32.0 * 32.0
_MEDIUM_MAX = 96.0 * 96.0


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    score: float
    box: BBox


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: BBox
    difficult: bool = False


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _det_sort_key(d: Detection):
    return (-d.score, d.image_id, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def nms(dets: list[Detection], iou_thresh: float, top_k: int | None = None) -> list[Detection]:
    """Greedy non-maximum suppression over one image and one class.

    Boxes are visited by descending score (coordinate ascension breaks
    ties); a box is suppressed when its IoU with any kept box reaches
    ``iou_thresh``.  The kept list is truncated to ``top_k`` when given.
    """
    if not 0 < iou_thresh <= 1:
        raise ValueError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    if top_k is not None and top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if len({(d.image_id, d.class_id) for d in dets}) > 1:
        raise ValueError("nms expects detections from a single image and class")
    kept: list[Detection] = []
    for det in sorted(dets, key=_det_sort_key):
        if all(iou(det.box, k.box) < iou_thresh for k in kept):
            kept.append(det)
    if top_k is not None:
        kept = kept[:top_k]
    return kept


def _interp_ap(recall: np.ndarray, precision: np.ndarray, points: np.ndarray) -> float:
    total = 0.0
    for r in points:
        mask = recall >= r
        total += float(precision[mask].max()) if mask.any() else 0.0
    return total / len(points)


def voc_ap(
    dets: list[Detection],
    gts: list[GroundTruth],
    class_id: int,
    iou_thresh: float = 0.5,
    use_difficult: bool = False,
) -> float | None:
    """11-point interpolated average precision for one class.

    Difficult ground truth neither counts toward recall nor penalizes a
    detection matched to it (unless ``use_difficult``).  Returns None
    when the class has no creditable ground truth.
    """
    gt_by_image: dict[str, list[GroundTruth]] = {}
    npos = 0
    for gt in gts:
        if gt.class_id != class_id:
            continue
        gt_by_image.setdefault(gt.image_id, []).append(gt)
        if use_difficult or not gt.difficult:
            npos += 1
    if npos == 0:
        return None

    cls_dets = sorted((d for d in dets if d.class_id == class_id), key=_det_sort_key)
    matched: set[tuple[str, int]] = set()
    tp = np.zeros(len(cls_dets))
    fp = np.zeros(len(cls_dets))
    for i, det in enumerate(cls_dets):
        cands = gt_by_image.get(det.image_id, [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(cands):
            ov = iou(det.box, gt.box)
            if ov > best_iou:
                best_iou, best_j = ov, j
        if best_j >= 0 and best_iou >= iou_thresh:
            gt = cands[best_j]
            if gt.difficult and not use_difficult:
                continue
            if (det.image_id, best_j) in matched:
                fp[i] = 1
            else:
                matched.add((det.image_id, best_j))
                tp[i] = 1
        else:
            fp[i] = 1
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / npos
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    # arange/10, not linspace: recall levels must be the correctly
    # rounded doubles of i/10 or a recall of exactly 3/5 misses 0.6
    return _interp_ap(recall, precision, np.arange(11) / 10.0)


def mean_ap(
    dets: list[Detection],
    gts: list[GroundTruth],
    class_ids: list[int],
    iou_thresh: float = 0.5,
    use_difficult: bool = False,
) -> tuple[float | None, dict[int, float | None]]:
    """Per-class 11-point AP and their mean over defined classes."""
    per_class = {
        cid: voc_ap(dets, gts, cid, iou_thresh, use_difficult) for cid in class_ids
    }
    defined = [v for v in per_class.values() if v is not None]
    return (sum(defined) / len(defined) if defined else None), per_class


def _area_in_bucket(area: float, bucket: str) -> bool:
    if bucket == "all":
        return True
    if bucket == "small":
        return area < _SMALL_MAX
    if bucket == "medium":
        return _SMALL_MAX <= area <= _MEDIUM_MAX
    return area > _MEDIUM_MAX


def _coco_single(
    dets: list[Detection],
    gts: list[GroundTruth],
    class_id: int,
    thresh: float,
    bucket: str,
) -> float | None:
    """AP for one (class, IoU threshold, size bucket) cell, or None."""
    gt_by_image: dict[str, list[tuple[GroundTruth, bool]]] = {}
    npos = 0
    for gt in gts:
        if gt.class_id != class_id:
            continue
        ignored = gt.difficult or not _area_in_bucket(gt.box.area, bucket)
        gt_by_image.setdefault(gt.image_id, []).append((gt, ignored))
        if not ignored:
            npos += 1
    if npos == 0:
        return None

    cls_dets = sorted((d for d in dets if d.class_id == class_id), key=_det_sort_key)
    matched: set[tuple[str, int]] = set()
    flags = []  # 1 = TP, 0 = FP, None = ignored detection
    for det in cls_dets:
        cands = gt_by_image.get(det.image_id, [])
        best_iou, best_j = 0.0, -1
        best_ign_iou, best_ign_j = 0.0, -1
        for j, (gt, ignored) in enumerate(cands):
            if (det.image_id, j) in matched:
                continue
            ov = iou(det.box, gt.box)
            if ov < thresh:
                continue
            if ignored:
                if ov > best_ign_iou:
                    best_ign_iou, best_ign_j = ov, j
            elif ov > best_iou:
                best_iou, best_j = ov, j
        if best_j >= 0:
            matched.add((det.image_id, best_j))
            flags.append(1)
        elif best_ign_j >= 0:
            matched.add((det.image_id, best_ign_j))
            flags.append(None)
        elif not _area_in_bucket(det.box.area, bucket):
            flags.append(None)
        else:
            flags.append(0)
    counted = [f for f in flags if f is not None]
    if not counted:
        return 0.0
    tp_cum = np.cumsum(counted)
    fp_cum = np.cumsum([1 - f for f in counted])
    recall = tp_cum / npos
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    return _interp_ap(recall, precision, np.arange(101) / 100.0)


def coco_ap(
    dets: list[Detection],
    gts: list[GroundTruth],
    class_ids: list[int],
) -> dict[str, float | None]:
    """Multi-threshold AP summary.

    Returns ``ap`` (mean over IoU 0.50:0.05:0.95), ``ap50``, ``ap75``,
    and ``ap_small`` / ``ap_medium`` / ``ap_large``.  Every mean runs
    over the (class, threshold) cells with creditable ground truth; a
    bucket nobody populates reports None.
    """

    def aggregate(bucket: str, thresholds) -> float | None:
        cells = []
        for t in thresholds:
            for cid in class_ids:
                v = _coco_single(dets, gts, cid, t, bucket)
                if v is not None:
                    cells.append(v)
        return sum(cells) / len(cells) if cells else None

    return {
        "ap": aggregate("all", COCO_THRESHOLDS),
        "ap50": aggregate("all", [COCO_THRESHOLDS[0]]),
        "ap75": aggregate("all", [COCO_THRESHOLDS[5]]),
        "ap_small": aggregate("small", COCO_THRESHOLDS),
        "ap_medium": aggregate("medium", COCO_THRESHOLDS),
        "ap_large": aggregate("large", COCO_THRESHOLDS),
    }


@dataclass
class ConfusionMatrix:
    """Rows are ground-truth classes; the trailing column is unmatched
    ground truth (false negatives)."""

    classes: tuple[str, ...]
    counts: np.ndarray
    fn: np.ndarray

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.fn

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["class", *self.classes, "FN"])
        for i, name in enumerate(self.classes):
            writer.writerow([name, *self.counts[i].tolist(), int(self.fn[i])])
        return out.getvalue()


@dataclass
class ConfusionDiff:
    """Signed cell-wise difference of two confusion matrices."""

    classes: tuple[str, ...]
    counts: np.ndarray
    fn: np.ndarray

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["class", *self.classes, "FN"])
        for i, name in enumerate(self.classes):
            writer.writerow([name, *self.counts[i].tolist(), int(self.fn[i])])
        return out.getvalue()

    def format_text(self) -> str:
        """Plain-text table; improvements are marked with a trailing '+'.

        A cell improves when the diagonal gains, an off-diagonal
        confusion shrinks, or the false-negative column shrinks.
        """
        names = self.classes
        width = max(len(n) for n in names + ("FN",)) + 1
        lines = [" " * width + "".join(f"{n:>{width}}" for n in names) + f"{'FN':>{width}}"]
        for i, name in enumerate(names):
            cells = []
            for j in range(len(names)):
                v = int(self.counts[i, j])
                better = (v > 0) if i == j else (v < 0)
                cells.append(f"{v}{'+' if better and v != 0 else ''}".rjust(width))
            v = int(self.fn[i])
            cells.append(f"{v}{'+' if v < 0 else ''}".rjust(width))
            lines.append(f"{name:>{width}}" + "".join(cells))
        return "\n".join(lines) + "\n"


def confusion_matrix(
    dets: list[Detection],
    gts: list[GroundTruth],
    classes: list[str] | tuple[str, ...],
    iou_thresh: float = 0.5,
    score_thresh: float = 0.5,
) -> ConfusionMatrix:
    """Class-agnostic matching of ground truth to detections.

    Detections below ``score_thresh`` are dropped.  Ground-truth boxes
    are visited in input order; each takes the highest-scoring unmatched
    detection overlapping it at ``iou_thresh`` regardless of class.
    Every ground-truth instance lands in exactly one cell, so each row
    sums to that class's instance count.
    """
    k = len(classes)
    counts = np.zeros((k, k), dtype=np.int64)
    fn = np.zeros(k, dtype=np.int64)
    strong = [d for d in dets if d.score >= score_thresh]
    for d in strong:
        if not 0 <= d.class_id < k:
            raise ValueError(f"detection class id {d.class_id} outside table of {k}")
    dets_by_image: dict[str, list[Detection]] = {}
    for d in strong:
        dets_by_image.setdefault(d.image_id, []).append(d)
    used: dict[str, set[int]] = {}
    for gt in gts:
        if not 0 <= gt.class_id < k:
            raise ValueError(f"ground-truth class id {gt.class_id} outside table of {k}")
        cands = dets_by_image.get(gt.image_id, [])
        taken = used.setdefault(gt.image_id, set())
        best = None
        best_key = None
        for j, det in enumerate(cands):
            if j in taken:
                continue
            if iou(det.box, gt.box) < iou_thresh:
                continue
            key = (-det.score, det.box.x1, det.box.y1, det.box.x2, det.box.y2, j)
            if best_key is None or key < best_key:
                best, best_key = j, key
        if best is None:
            fn[gt.class_id] += 1
        else:
            taken.add(best)
            counts[gt.class_id, cands[best].class_id] += 1
    return ConfusionMatrix(classes=tuple(classes), counts=counts, fn=fn)


def confusion_diff(base: ConfusionMatrix, other: ConfusionMatrix) -> ConfusionDiff:
    """Cell-wise ``other - base``.  Class tables must match exactly."""
    if base.classes != other.classes:
        raise ValueError("confusion matrices describe different class tables")
    return ConfusionDiff(
        classes=base.classes,
        counts=other.counts - base.counts,
        fn=other.fn - base.fn,
    )


def _parse_box(raw: dict, where: str, offset: int) -> BBox:
    try:
        box = BBox(float(raw["x1"]), float(raw["y1"]), float(raw["x2"]), float(raw["y2"]))
    except KeyError as exc:
        raise ParseError(f"{where}: missing box field {exc}", offset) from None
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}", offset) from None
    return box


def _class_id(raw: dict, classes: list[str] | None, where: str, offset: int) -> int:
    value = raw.get("class")
    if value is None:
        raise ParseError(f"{where}: missing 'class'", offset)
    if isinstance(value, str):
        if classes is None:
            raise ParseError(f"{where}: class given by name {value!r} but no class table loaded",
                             offset)
        try:
            return classes.index(value)
        except ValueError:
            raise ParseError(f"{where}: unknown class {value!r}", offset) from None
    return int(value)


def _iter_jsonl(path: str):
    offset = 0
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped:
                try:
                    yield lineno, offset, json.loads(stripped)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path} line {lineno}: {exc.msg}", offset) from None
            offset += len(line)


def load_detections(path: str, classes: list[str] | None = None) -> list[Detection]:
    """Read detections from JSON lines.

    Each record: ``image_id``, ``class`` (table name or integer id),
    ``score``, and box corners ``x1 y1 x2 y2``.
    """
    out = []
    for lineno, offset, raw in _iter_jsonl(path):
        where = f"{path} line {lineno}"
        if "image_id" not in raw:
            raise ParseError(f"{where}: missing 'image_id'", offset)
        if "score" not in raw:
            raise ParseError(f"{where}: missing 'score'", offset)
        out.append(
            Detection(
                image_id=str(raw["image_id"]),
                class_id=_class_id(raw, classes, where, offset),
                score=float(raw["score"]),
                box=_parse_box(raw, where, offset),
            )
        )
    return out


def load_groundtruth(path: str, classes: list[str] | None = None) -> list[GroundTruth]:
    """Read ground truth from JSON lines; ``difficult`` defaults false."""
    out = []
    for lineno, offset, raw in _iter_jsonl(path):
        where = f"{path} line {lineno}"
        if "image_id" not in raw:
            raise ParseError(f"{where}: missing 'image_id'", offset)
        out.append(
            GroundTruth(
                image_id=str(raw["image_id"]),
                class_id=_class_id(raw, classes, where, offset),
                box=_parse_box(raw, where, offset),
                difficult=bool(raw.get("difficult", False)),
            )
        )
    return out


def load_classes(path: str) -> list[str]:
    """Class table: a JSON array of unique names."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        raise ParseError(f"{path}: class table must be a JSON array of strings", 0)
    if len(set(raw)) != len(raw):
        raise ParseError(f"{path}: class names must be unique", 0)
    return raw


def ap_csv(
    per_class: dict[int, float | None],
    classes: list[str] | tuple[str, ...],
    map_value: float | None,
) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["class", "ap"])
    for cid in sorted(per_class):
        name = classes[cid] if 0 <= cid < len(classes) else str(cid)
        value = per_class[cid]
        writer.writerow([name, "NA" if value is None else f"{value:.6f}"])
    writer.writerow(["mAP", "NA" if map_value is None else f"{map_value:.6f}"])
    return out.getvalue()


def coco_csv(summary: dict[str, float | None]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for key in ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large"):
        value = summary[key]
        writer.writerow([key, "NA" if value is None else f"{value:.6f}"])
    return out.getvalue()
