"""
VOC-protocol detection evaluation: greedy matching, precision-recall,
11-point or all-point AP, and the unweighted class mean.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .boxes import iou_hbb, iou_matrix
from .dota_io import CLASS_ABBREVIATIONS, DOTA_CLASSES, AnnotationRecord, DetectionRecord

__all__ = [
    "TP",
    "FP",
    "IGNORED",
    "PRCurve",
    "iou_hbb",
    "match_detections",
    "precision_recall",
    "average_precision",
    "mean_ap",
    "evaluate",
    "EvalReport",
]

TP, FP, IGNORED = 1, 0, -1


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    n_gt: int

    def __len__(self) -> int:
        return len(self.recall)

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def match_detections(det_boxes, det_scores, gt_boxes, gt_difficult=None, iou_thresh: float = 0.5) -> np.ndarray:
    """
    Label the detections of one image and one class as TP, FP or IGNORED.

    Detections are visited by descending score, ties in input order, and the
    returned flags follow that visiting order. Each detection is compared with
    its highest-IoU ground truth: at or above threshold, a difficult GT makes
    it IGNORED, an unclaimed GT makes it TP (and claims the GT), a claimed GT
    makes it FP. Below threshold it is FP.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_scores = np.asarray(det_scores, dtype=np.float64).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    difficult = np.zeros(len(gt_boxes), bool) if gt_difficult is None else np.asarray(gt_difficult, bool)
    order = np.argsort(-det_scores, kind="stable")
    flags = np.full(len(order), FP, dtype=np.int8)
    if len(gt_boxes) == 0:
        return flags
    ious = iou_matrix(det_boxes, gt_boxes)
    claimed = np.zeros(len(gt_boxes), bool)
    for rank, i in enumerate(order):
        j = int(np.argmax(ious[i]))
        if ious[i, j] < iou_thresh:
            continue
        if difficult[j]:
            flags[rank] = IGNORED
        elif not claimed[j]:
            claimed[j] = True
            flags[rank] = TP
    return flags


def precision_recall(flags: Sequence[int], n_gt: int) -> PRCurve:
    """Cumulative precision/recall over flags already in descending-score order."""
    flags = np.asarray(flags, dtype=np.int8)
    flags = flags[flags != IGNORED]
    tp = np.cumsum(flags == TP).astype(np.float64)
    fp = np.cumsum(flags == FP).astype(np.float64)
    if len(flags) == 0:
        return PRCurve(np.zeros(0), np.zeros(0), n_gt)
    precision = tp / (tp + fp)
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(tp)
    return PRCurve(recall, precision, n_gt)


def average_precision(curve: PRCurve, method: str = "eleven_point") -> float:
    """
    Area under the interpolated precision-recall curve.

    ``eleven_point`` averages, over recall anchors 0, 0.1, ..., 1.0, the best
    precision reached at recall >= anchor. ``all_point`` integrates the
    monotone precision envelope exactly. No ground truth gives 0.
    """
    if curve.n_gt <= 0 or len(curve) == 0:
        return 0.0
    rec, prec = curve.recall, curve.precision
    if method == "eleven_point":
        total = 0.0
        for i in range(11):
            hits = prec[rec >= i / 10]
            total += hits.max() if hits.size else 0.0
        return total / 11.0
    if method == "all_point":
        mrec = np.concatenate(([0.0], rec, [1.0]))
        mpre = np.concatenate(([0.0], prec, [0.0]))
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    raise ValueError(f"unknown AP method {method!r}; use 'eleven_point' or 'all_point'")


def mean_ap(per_class: Mapping[str, float | None]) -> float:
    """Unweighted mean over classes; ``None`` entries (no GT, no detections) are skipped."""
    values = [v for v in per_class.values() if v is not None]
    if not values:
        raise ValueError("mean_ap needs at least one evaluated class")
    return float(sum(values) / len(values))


@dataclass
class EvalReport:
    per_class: dict[str, float | None]
    mAP: float
    curves: dict[str, PRCurve] = field(default_factory=dict)

    def as_row(self, method: str = "") -> list[str]:
        cells = [method] if method else []
        for cls in DOTA_CLASSES:
            v = self.per_class.get(cls)
            cells.append("-" if v is None else f"{100 * v:.2f}")
        cells.append(f"{100 * self.mAP:.2f}")
        return cells


def evaluate(dets: Iterable[DetectionRecord], gts: Mapping[str, Sequence[AnnotationRecord]],
             iou_thresh: float = 0.5, method: str = "eleven_point") -> EvalReport:
    """
    Per-class AP over every image in ``gts`` and the resulting mAP.

    Non-difficult ground truths define recall. Detections on images absent
    from ``gts`` count as false positives. Classes with neither ground truth
    nor detections are reported as ``None`` and left out of the mean; if no
    class qualifies, mAP is 0.
    """
    dets = list(dets)
    per_class: dict[str, float | None] = {}
    curves: dict[str, PRCurve] = {}
    for cls in DOTA_CLASSES:
        cls_dets = [d for d in dets if d.category == cls]
        n_gt = 0
        gt_by_image: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for image_id, records in gts.items():
            rs = [r for r in records if r.category == cls]
            n_gt += sum(not r.difficult for r in rs)
            if rs:
                gt_by_image[image_id] = (np.array([r.hbb for r in rs]), np.array([r.difficult for r in rs]))
        if n_gt == 0 and not cls_dets:
            per_class[cls] = None
            continue
        scores = np.array([d.score for d in cls_dets], dtype=np.float64)
        boxes = np.array([d.hbb for d in cls_dets], dtype=np.float64).reshape(-1, 4)
        flag_of = np.full(len(cls_dets), FP, dtype=np.int8)
        by_image: dict[str, list[int]] = {}
        for i, d in enumerate(cls_dets):
            by_image.setdefault(d.image_id, []).append(i)
        for image_id, idx in by_image.items():
            idx = np.asarray(idx)
            gt_boxes, gt_difficult = gt_by_image.get(image_id, (np.zeros((0, 4)), np.zeros(0, bool)))
            local = match_detections(boxes[idx], scores[idx], gt_boxes, gt_difficult, iou_thresh)
            flag_of[idx[np.argsort(-scores[idx], kind="stable")]] = local
        flags = flag_of[np.argsort(-scores, kind="stable")]
        curve = precision_recall(flags, n_gt)
        curves[cls] = curve
        per_class[cls] = average_precision(curve, method)
    evaluated = [v for v in per_class.values() if v is not None]
    return EvalReport(per_class, mean_ap(per_class) if evaluated else 0.0, curves)


def format_table(rows: Mapping[str, EvalReport]) -> str:
    """Fixed-width table: one row per method, 15 class columns, then mAP (percent)."""
    header = ["Method"] + [CLASS_ABBREVIATIONS[c] for c in DOTA_CLASSES] + ["mAP(%)"]
    body = [r.as_row(name) for name, r in rows.items()]
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    buf = io.StringIO()
    for row in [header] + body:
        buf.write("  ".join(str(c).rjust(w) for c, w in zip(row, widths)).rstrip() + "\n")
    return buf.getvalue()


def format_csv(rows: Mapping[str, EvalReport]) -> str:
    header = ["method"] + list(DOTA_CLASSES) + ["mAP"]
    lines = [",".join(header)]
    for name, r in rows.items():
        vals = ["" if r.per_class.get(c) is None else f"{r.per_class[c]:.6f}" for c in DOTA_CLASSES]
        lines.append(",".join([name] + vals + [f"{r.mAP:.6f}"]))
    return "\n".join(lines) + "\n"
