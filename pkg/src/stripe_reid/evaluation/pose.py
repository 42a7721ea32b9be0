"""Keypoint similarity and single-instance pose AP/AR."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import MatchingError, SchemaError, UndefinedOKSError, ValidationError
from ..geometry import NUM_KEYPOINTS, Skeleton
from .detection import COCO_IOU_THRESHOLDS, interpolated_ap, pr_curve

# Annotator variance of each keypoint position, normalized by object scale (x 1e-4).
KEYPOINT_VARIANCE_E4 = (7.7, 67.7, 69.0, 4.1, 51.3, 6.9, 41.7, 9.1, 19.4, 10.0, 11.1, 29.9, 6.9, 46.7, 29.0)


@dataclass(frozen=True)
class OksConfig:
    sigmas: tuple[float, ...] = field(
        default_factory=lambda: tuple(float(np.sqrt(v * 1e-4)) for v in KEYPOINT_VARIANCE_E4)
    )
    thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS

    def __post_init__(self):
        if len(self.sigmas) != NUM_KEYPOINTS or min(self.sigmas) <= 0:
            raise ValidationError(f"need {NUM_KEYPOINTS} positive sigmas")

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.asarray(self.sigmas)


def oks(pred: Skeleton, gt: Skeleton, cfg: OksConfig = OksConfig()) -> float:
    vis = gt.visible
    if not vis.any():
        raise UndefinedOKSError("ground truth has no visible keypoint")
    d2 = np.sum((pred.xy - gt.xy) ** 2, axis=1)
    e = d2 / (2.0 * gt.scale_s**2 * cfg.k**2)
    return float(np.mean(np.exp(-e[vis])))


@dataclass
class KeypointReport:
    thresholds: list[float]
    ap: list[float]
    ar: list[float]
    oks: list[float]

    def to_json(self) -> dict:
        keys = [f"{t:.2f}" for t in self.thresholds]
        return {
            "n_instances": len(self.oks),
            "ap": dict(zip(keys, self.ap)),
            "ar": dict(zip(keys, self.ar)),
            "mean_ap": float(np.mean(self.ap)),
            "mean_ar": float(np.mean(self.ar)),
        }


def keypoint_ap_ar(preds, gts, cfg: OksConfig = OksConfig(), scores=None) -> KeypointReport:
    """AP and AR per OKS threshold with one prediction per ground-truth instance.

    ``scores`` ranks the predictions for the PR curve; without scores every
    prediction ties and AP reduces to recall times precision at one point.
    """
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise MatchingError(f"{len(preds)} predictions for {len(gts)} ground-truth instances")
    if not gts:
        raise MatchingError("no instances to evaluate")
    scores = np.ones(len(gts)) if scores is None else np.asarray(scores, dtype=np.float64)
    sims = np.array([oks(p, g, cfg) for p, g in zip(preds, gts)])
    aps, ars = [], []
    for t in cfg.thresholds:
        tp = sims >= t
        rec, prec = pr_curve(scores, tp, len(gts))
        aps.append(interpolated_ap(rec, prec))
        ars.append(float(tp.sum() / len(gts)))
    return KeypointReport(list(cfg.thresholds), aps, ars, sims.tolist())


def parse_pose_predictions(text: str) -> dict[str, tuple[np.ndarray, float]]:
    """``{"predictions": [{"id", "keypoints": [[x, y, v] x 15], "score"?}]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("predictions"), list):
        raise SchemaError("top level must be an object with a 'predictions' list", field="predictions")
    out = {}
    for i, p in enumerate(doc["predictions"]):
        where = f"predictions[{i}]"
        if not isinstance(p, dict) or not isinstance(p.get("id"), str):
            raise SchemaError("prediction needs a string 'id'", field=where)
        try:
            kps = np.array(p["keypoints"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError("bad keypoints", field=f"{where}.keypoints") from exc
        if kps.shape != (NUM_KEYPOINTS, 3):
            raise SchemaError(f"expected {NUM_KEYPOINTS} x 3 keypoints", field=f"{where}.keypoints")
        out[p["id"]] = (kps, float(p.get("score", 1.0)))
    return out
