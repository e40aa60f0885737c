"""Detection metrics: IoU, greedy matching, AP at a fixed IoU, precision/recall/F1."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def cxcywh_to_corners(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    half = b[..., 2:] / 2.0
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def corners_to_cxcywh(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.concatenate([(c[..., :2] + c[..., 2:]) / 2.0, c[..., 2:] - c[..., :2]], axis=-1)


def iou_corners(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between [N,4] and [M,4] corner boxes."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    lo = np.maximum(a[:, None, :2], b[None, :, :2])
    hi = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.clip(hi - lo, 0.0, None).prod(axis=-1)
    area_a = (a[:, 2:] - a[:, :2]).prod(axis=-1)
    area_b = (b[:, 2:] - b[:, :2]).prod(axis=-1)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (cx, cy, w, h) boxes."""
    return iou_corners(cxcywh_to_corners(np.atleast_2d(a)), cxcywh_to_corners(np.atleast_2d(b)))


def iou(a, b) -> float:
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def score_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


@dataclass
class Detections:
    boxes: np.ndarray   # [N,4] cx,cy,w,h
    scores: np.ndarray  # [N]
    labels: np.ndarray  # [N]


@dataclass
class GroundTruth:
    boxes: np.ndarray
    labels: np.ndarray


def match_detections(det_boxes, det_scores, det_labels, gt_boxes, gt_labels,
                     iou_thresh: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Greedy same-class matching in score order.

    Returns (tp flags per detection in the *input* order, matched flag per GT).
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    det_labels = np.asarray(det_labels)
    gt_labels = np.asarray(gt_labels)
    tp = np.zeros(len(det_boxes), dtype=bool)
    matched = np.zeros(len(gt_boxes), dtype=bool)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return tp, matched
    ious = iou_matrix(det_boxes, gt_boxes)
    for d in score_order(det_scores):
        cand = (gt_labels == det_labels[d]) & ~matched
        if not cand.any():
            continue
        vals = np.where(cand, ious[d], -1.0)
        g = int(np.argmax(vals))
        if vals[g] >= iou_thresh:
            tp[d] = True
            matched[g] = True
    return tp, matched


def average_precision(tp_sorted: np.ndarray, n_gt: int) -> float:
    """All-point interpolated area under the PR curve for score-sorted TP flags."""
    if n_gt == 0:
        return float("nan")
    tp_sorted = np.asarray(tp_sorted, dtype=np.float64)
    if tp_sorted.size == 0:
        return 0.0
    ctp = np.cumsum(tp_sorted)
    cfp = np.cumsum(1.0 - tp_sorted)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[1.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _per_class_records(dets: list[Detections], gts: list[GroundTruth], iou_thresh: float,
                       classes):
    """For each class: scores, TP flags (pooled over images) and GT count."""
    recs = {c: ([], [], 0) for c in classes}
    for det, gt in zip(dets, gts):
        tp, _ = match_detections(det.boxes, det.scores, det.labels, gt.boxes, gt.labels,
                                 iou_thresh)
        for c in classes:
            scores, flags, n = recs[c]
            m = np.asarray(det.labels) == c
            scores.extend(np.asarray(det.scores)[m].tolist())
            flags.extend(tp[m].tolist())
            recs[c] = (scores, flags, n + int(np.sum(np.asarray(gt.labels) == c)))
    return recs


def class_ap(dets, gts, iou_thresh: float, classes) -> dict[int, float]:
    out = {}
    for c, (scores, flags, n_gt) in _per_class_records(dets, gts, iou_thresh, classes).items():
        order = score_order(np.asarray(scores)) if scores else np.zeros(0, dtype=int)
        out[c] = average_precision(np.asarray(flags, dtype=bool)[order], n_gt)
    return out


def mean_ap(dets: list[Detections], gts: list[GroundTruth], iou_thresh: float = 0.5,
            classes=None) -> float:
    """Class-averaged AP; classes without ground truth are skipped with a warning."""
    if classes is None:
        classes = sorted({int(c) for g in gts for c in np.asarray(g.labels)})
    aps = class_ap(dets, gts, iou_thresh, classes)
    valid = []
    for c, ap in aps.items():
        if np.isnan(ap):
            log.warning("class %s has no ground-truth instances; excluded from mAP", c)
        else:
            valid.append(ap)
    return float(np.mean(valid)) if valid else 0.0


def ap50(dets, gts, classes=None) -> float:
    return mean_ap(dets, gts, 0.5, classes)


def ap75(dets, gts, classes=None) -> float:
    return mean_ap(dets, gts, 0.75, classes)


def _safe_div(a: float, b: float) -> float:
    return a / b if b > 0 else 0.0


def pr_counts(dets, gts, conf: float = 0.5, iou_thresh: float = 0.5, cls=None):
    tp = fp = n_gt = 0
    for det, gt in zip(dets, gts):
        keep = np.asarray(det.scores) >= conf
        labels = np.asarray(det.labels)
        gl = np.asarray(gt.labels)
        if cls is not None:
            keep &= labels == cls
        flags, _ = match_detections(np.asarray(det.boxes).reshape(-1, 4)[keep],
                                    np.asarray(det.scores)[keep], labels[keep],
                                    gt.boxes if cls is None else np.asarray(gt.boxes)[gl == cls],
                                    gl if cls is None else gl[gl == cls], iou_thresh)
        tp += int(flags.sum())
        fp += int((~flags).sum())
        n_gt += int(len(gl) if cls is None else np.sum(gl == cls))
    return tp, fp, n_gt


def pr_f1(dets, gts, conf: float = 0.5, iou_thresh: float = 0.5, cls=None):
    """(precision, recall, F1) over detections scoring at least ``conf``."""
    tp, fp, n_gt = pr_counts(dets, gts, conf, iou_thresh, cls)
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, n_gt)
    f1 = _safe_div(2 * p * r, p + r)
    return p, r, f1


def confusion_counts(dets, gts, num_classes: int, conf: float = 0.5, iou_thresh: float = 0.5):
    """[K+1, K+1] counts: rows true class (K = missed), cols predicted (K = background FP)."""
    K = num_classes
    M = np.zeros((K + 1, K + 1), dtype=int)
    for det, gt in zip(dets, gts):
        keep = np.asarray(det.scores) >= conf
        db = np.asarray(det.boxes).reshape(-1, 4)[keep]
        ds = np.asarray(det.scores)[keep]
        dl = np.asarray(det.labels)[keep]
        gb = np.asarray(gt.boxes).reshape(-1, 4)
        gl = np.asarray(gt.labels)
        used = np.zeros(len(gb), dtype=bool)
        ious = iou_matrix(db, gb) if len(db) and len(gb) else np.zeros((len(db), len(gb)))
        for d in score_order(ds):
            vals = np.where(~used, ious[d], -1.0) if len(gb) else np.zeros(0)
            if len(gb) and vals.max() >= iou_thresh:
                g = int(np.argmax(vals))
                used[g] = True
                M[gl[g], dl[d]] += 1
            else:
                M[K, dl[d]] += 1
        for g in np.nonzero(~used)[0]:
            M[gl[g], K] += 1
    return M


def metrics_table(dets, gts, num_classes: int, conf: float = 0.5) -> list[dict]:
    rows = []
    ap50s = class_ap(dets, gts, 0.5, range(num_classes))
    ap75s = class_ap(dets, gts, 0.75, range(num_classes))
    for c in range(num_classes):
        p, r, f1 = pr_f1(dets, gts, conf, cls=c)
        rows.append({"class": str(c), "AP50": ap50s[c], "AP75": ap75s[c], "P": p, "R": r, "F1": f1})
    p, r, f1 = pr_f1(dets, gts, conf)
    rows.append({"class": "all", "AP50": mean_ap(dets, gts, 0.5, range(num_classes)),
                 "AP75": mean_ap(dets, gts, 0.75, range(num_classes)), "P": p, "R": r, "F1": f1})
    return rows


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "AP50", "AP75", "P", "R", "F1"])
    for r in rows:
        w.writerow([r["class"]] + [("nan" if np.isnan(r[k]) else f"{r[k]:.6f}")
                                   for k in ("AP50", "AP75", "P", "R", "F1")])
    return buf.getvalue()
