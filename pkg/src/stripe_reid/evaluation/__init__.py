"""Benchmark metrics: re-ID ranking, keypoint OKS, detection AP and PPF."""

from .detection import detection_eval, iou, ppf
from .pose import OksConfig, keypoint_ap_ar, oks
from .reid import average_precision, build_query, cmc_curve, evaluate_reid
from .wild import wild_couple

__all__ = [
    "OksConfig",
    "average_precision",
    "build_query",
    "cmc_curve",
    "detection_eval",
    "evaluate_reid",
    "iou",
    "keypoint_ap_ar",
    "oks",
    "ppf",
    "wild_couple",
]
