"""Localization metrics over threshold sweeps: BoxAccV2, Top-1 Loc, GT-known, pIoU, PxAP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import PixelAnnotation

IOU_LEVELS = (0.3, 0.5, 0.7)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSweep:
    thresholds: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.ndim != 1 or t.size < 2:
            raise MetricError("a sweep needs at least two thresholds")
        if np.any(np.diff(t) <= 0):
            raise MetricError("thresholds must be strictly increasing")
        if t[0] != 0.0 or t[-1] != 1.0 or t.min() < 0 or t.max() > 1:
            raise MetricError("thresholds must span [0, 1] with both endpoints")
        object.__setattr__(self, "thresholds", t)

    @classmethod
    def uniform(cls, count: int = 101) -> "ThresholdSweep":
        return cls(np.linspace(0.0, 1.0, count))

    def __len__(self):
        return self.thresholds.size


def _thresholds(sweep) -> np.ndarray:
    if sweep is None:
        return ThresholdSweep.uniform().thresholds
    if isinstance(sweep, ThresholdSweep):
        return sweep.thresholds
    t = np.asarray(sweep, dtype=np.float64)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise MetricError("thresholds must be a strictly increasing 1-d array")
    return t


@dataclass
class EvalRecord:
    image_id: str
    score_map: np.ndarray  # (H, W), normalized to [0, 1], for the ground-truth class
    pred_class: int
    annotation: PixelAnnotation

    @property
    def gt_class(self) -> int:
        return self.annotation.class_id


def threshold_map(score_map: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(score_map) >= tau


def mask_to_box(mask: np.ndarray) -> Optional[tuple]:
    """Inclusive (x0, y0, x1, y1) box of the largest 4-connected foreground component."""
    box = kernels.largest_box(np.ascontiguousarray(mask, dtype=np.bool_))
    if box[0] < 0:
        return None
    return tuple(int(v) for v in box)


def box_iou(a, b) -> float:
    """IoU of two inclusive pixel boxes (x0, y0, x1, y1)."""
    iw = min(a[2], b[2]) - max(a[0], b[0]) + 1
    ih = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / (area_a + area_b - inter)


def box_iou_sweep(records: Sequence[EvalRecord], sweep=None) -> np.ndarray:
    """(n_records, n_thresholds) best IoU between the extracted box and any ground-truth box."""
    t = _thresholds(sweep)
    out = np.zeros((len(records), t.size))
    for i, rec in enumerate(records):
        if not rec.annotation.boxes:
            raise MetricError(f"record {rec.image_id} has no ground-truth boxes")
        boxes = kernels.sweep_boxes(np.ascontiguousarray(rec.score_map, dtype=np.float64), t)
        gts = [b.as_tuple() for b in rec.annotation.boxes]
        for j, box in enumerate(boxes):
            if box[0] >= 0:
                out[i, j] = max(box_iou(box, g) for g in gts)
    return out


def box_acc_v2(records: Sequence[EvalRecord], sweep=None, iou_levels=IOU_LEVELS) -> float:
    if not records:
        raise MetricError("no records to evaluate")
    ious = box_iou_sweep(records, sweep)
    best = [(ious >= delta).mean(axis=0).max() for delta in iou_levels]
    return float(np.mean(best) * 100.0)


def top1_and_gtknown(records: Sequence[EvalRecord], delta: float = 0.5, sweep=None,
                     tau: Optional[float] = None):
    """(top1 %, gt_known %, chosen threshold).

    Without a given ``tau`` the threshold maximizing GT-known on these records is used;
    Top-1 is read at the same threshold.
    """
    if not records:
        raise MetricError("no records to evaluate")
    t = _thresholds(sweep) if tau is None else np.array([float(tau)])
    hit = box_iou_sweep(records, t) >= delta
    gt_known = hit.mean(axis=0)
    j = int(np.argmax(gt_known))
    correct_cls = np.array([r.pred_class == r.gt_class for r in records])
    top1 = (hit[:, j] & correct_cls).mean()
    return float(top1 * 100.0), float(gt_known[j] * 100.0), float(t[j])


def pixel_counts(records: Sequence[EvalRecord], sweep=None):
    """Pooled (predicted positives, true positives) per threshold and the foreground total."""
    t = _thresholds(sweep)
    pred = np.zeros(t.size, dtype=np.int64)
    tp = np.zeros(t.size, dtype=np.int64)
    fg = 0
    for rec in records:
        gt = rec.annotation.mask
        if gt is None:
            raise MetricError(f"record {rec.image_id} has no ground-truth mask")
        gt = np.ascontiguousarray(gt, dtype=np.bool_).ravel()
        p, q = kernels.sweep_counts(np.ascontiguousarray(rec.score_map, dtype=np.float64).ravel(), gt, t)
        pred += p
        tp += q
        fg += int(gt.sum())
    if fg == 0:
        raise MetricError("ground truth contains no foreground pixels")
    return pred, tp, fg


def pixel_pr_curve(records: Sequence[EvalRecord], sweep=None):
    """List of (precision, recall) per threshold; precision is nan where nothing is predicted."""
    pred, tp, fg = pixel_counts(records, sweep)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred > 0, tp / np.maximum(pred, 1), np.nan)
    recall = tp / fg
    return list(zip(precision.tolist(), recall.tolist()))


def _average_precision(precision: np.ndarray, recall: np.ndarray) -> float:
    # Points ordered by decreasing threshold have non-decreasing recall. Thresholds
    # predicting nothing are dropped; the curve is extended flat to recall 0.
    keep = ~np.isnan(precision)
    p = precision[keep][::-1]
    r = recall[keep][::-1]
    if p.size == 0:
        return 0.0
    p = np.concatenate([[p[0]], p])
    r = np.concatenate([[0.0], r])
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def pxap(records: Sequence[EvalRecord], sweep=None) -> float:
    curve = np.array(pixel_pr_curve(records, sweep), dtype=np.float64)
    return _average_precision(curve[:, 0], curve[:, 1]) * 100.0


def piou(records: Sequence[EvalRecord], sweep=None) -> float:
    pred, tp, fg = pixel_counts(records, sweep)
    iou = tp / (pred + fg - tp)
    return float(iou.max() * 100.0)


def evaluate_records(records: Sequence[EvalRecord], sweep=None) -> tuple:
    """Every metric the annotations support. Returns (summary dict, per-threshold curve rows)."""
    if not records:
        raise MetricError("no records to evaluate")
    t = _thresholds(sweep)
    summary = {"num_images": len(records)}
    curves = {"threshold": t.tolist()}
    if all(r.annotation.boxes for r in records):
        ious = box_iou_sweep(records, t)
        for delta in IOU_LEVELS:
            curves[f"box_acc_{delta}"] = (ious >= delta).mean(axis=0).tolist()
        summary["box_acc_v2"] = float(np.mean([max(curves[f"box_acc_{d}"]) for d in IOU_LEVELS]) * 100.0)
        top1, gt_known, tau = top1_and_gtknown(records, 0.5, t)
        summary.update(top1_loc=top1, gt_known=gt_known, gt_known_threshold=tau)
    if all(r.annotation.mask is not None for r in records):
        pred, tp, fg = pixel_counts(records, t)
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(pred > 0, tp / np.maximum(pred, 1), np.nan)
        recall = tp / fg
        iou = tp / (pred + fg - tp)
        curves.update(precision=precision.tolist(), recall=recall.tolist(), pixel_iou=iou.tolist())
        summary["pxap"] = _average_precision(precision, recall) * 100.0
        summary["piou"] = float(iou.max() * 100.0)
        summary["piou_threshold"] = float(t[int(np.argmax(iou))])
    summary["cls_accuracy"] = float(np.mean([r.pred_class == r.gt_class for r in records]) * 100.0)
    return summary, curves


def curves_to_csv(curves: dict) -> str:
    keys = list(curves)
    rows = [",".join(keys)]
    for i in range(len(curves["threshold"])):
        rows.append(",".join(repr(float(curves[k][i])) for k in keys))
    return "\n".join(rows) + "\n"
