"""Box-level metrics: IoU, greedy matching, PR curves, AP and PPF."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError, ValidationError
from ..geometry import Rect

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
PPF_BASELINE_MAP = 0.43


def iou(a: Rect, b: Rect) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return float(inter / union) if union > 0 else 0.0


def ppf(mAP: float, bflops: float) -> float:
    """Detector efficiency relative to a 0.43 mAP / 1 BFLOP baseline."""
    if not bflops > 0:
        raise ValidationError(f"BFLOPs must be positive, got {bflops}")
    return (mAP - PPF_BASELINE_MAP) / bflops


def pr_curve(scores, tp, n_positive: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative recall/precision at each distinct score level, highest first.

    Predictions sharing a score are admitted together, so the curve only
    depends on the order of the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    tp = np.asarray(tp, dtype=bool)
    if scores.size == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], tp[order]
    ctp = np.cumsum(t)
    cfp = np.cumsum(~t)
    last = np.r_[s[1:] != s[:-1], True]
    ctp, cfp = ctp[last], cfp[last]
    recall = ctp / n_positive if n_positive > 0 else np.zeros(len(ctp))
    precision = ctp / (ctp + cfp)
    return recall, precision


def interpolated_ap(recall, precision) -> float:
    """All-points interpolated area under a PR curve."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if recall.size == 0:
        return 0.0
    r = np.r_[0.0, recall]
    p = np.r_[0.0, precision]
    p = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * p[1:]))


@dataclass
class Detection:
    box: Rect
    score: float


# image id -> detections
DetectionSet = dict


def parse_detections(text: str) -> dict[str, list[Detection]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise SchemaError("top level must be an object with an 'images' list", field="images")
    out: dict[str, list[Detection]] = {}
    for i, img in enumerate(doc["images"]):
        where = f"images[{i}]"
        if not isinstance(img, dict) or not isinstance(img.get("id"), str):
            raise SchemaError("image needs a string 'id'", field=where)
        dets = img.get("dets")
        if not isinstance(dets, list):
            raise SchemaError("'dets' must be a list", field=f"{where}.dets")
        rows = []
        for j, d in enumerate(dets):
            ok = isinstance(d, list) and len(d) == 5
            ok = ok and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in d)
            if not ok or not all(np.isfinite(d)):
                raise SchemaError("detection must be [x, y, w, h, score]", field=f"{where}.dets[{j}]")
            x, y, w, h, score = (float(v) for v in d)
            if w <= 0 or h <= 0:
                raise SchemaError("detection box needs positive size", field=f"{where}.dets[{j}]")
            rows.append(Detection(Rect.from_xywh(x, y, w, h), score))
        out.setdefault(img["id"], []).extend(rows)
    return out


def load_detections(path) -> dict[str, list[Detection]]:
    with open(path, encoding="utf-8") as fh:
        return parse_detections(fh.read())


def gt_boxes(ds) -> dict[str, list[Rect]]:
    """Ground-truth boxes per image, unknown identities included."""
    out: dict[str, list[Rect]] = {}
    for s in ds.samples:
        if s.source == "ground_truth":
            out.setdefault(s.image, []).append(s.bbox)
    return out


def match_image(dets: list[Detection], gts: list[Rect], threshold: float) -> list[bool]:
    """Score-descending greedy matching; returns TP flags in input order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    used = [False] * len(gts)
    tp = [False] * len(dets)
    for i in order:
        best, best_iou = -1, threshold
        for j, g in enumerate(gts):
            if used[j]:
                continue
            v = iou(dets[i].box, g)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            tp[i] = True
    return tp


@dataclass
class DetectionReport:
    thresholds: list[float]
    ap: list[float]
    curves: list[tuple[list[float], list[float]]]
    n_gt: int
    n_det: int

    @property
    def mAP(self) -> float:
        return float(np.mean(self.ap))

    def ap_at(self, threshold: float) -> float:
        return self.ap[self.thresholds.index(threshold)]

    def to_json(self) -> dict:
        return {
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "mAP": self.mAP,
            "ap": dict(zip([f"{t:.2f}" for t in self.thresholds], self.ap)),
        }


def detection_eval(dets, gts, thresholds=COCO_IOU_THRESHOLDS) -> DetectionReport:
    """AP per IoU threshold over all images and its mean."""
    images = sorted(set(dets) | set(gts))
    n_gt = sum(len(gts.get(im, ())) for im in images)
    scores = [d.score for im in images for d in dets.get(im, ())]
    aps, curves = [], []
    for t in thresholds:
        tp = []
        for im in images:
            tp.extend(match_image(dets.get(im, []), gts.get(im, []), t))
        rec, prec = pr_curve(scores, tp, n_gt)
        aps.append(interpolated_ap(rec, prec))
        curves.append((rec.tolist(), prec.tolist()))
    return DetectionReport(list(thresholds), aps, curves, n_gt, len(scores))
