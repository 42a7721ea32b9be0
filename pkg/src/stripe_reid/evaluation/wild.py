"""Coupling detector output to ground-truth tigers for the wild re-ID track."""

from __future__ import annotations

from dataclasses import dataclass

from .detection import Detection, iou

DEFAULT_TOP_K = 10
FOUND_IOU = 0.5


@dataclass
class WildAssignment:
    """``sample_id -> (image_id, detection index)`` or ``None`` when not found."""

    matches: dict[str, tuple[str, int] | None]

    @property
    def found(self) -> set[str]:
        return {sid for sid, m in self.matches.items() if m is not None}

    @property
    def missed(self) -> set[str]:
        return {sid for sid, m in self.matches.items() if m is None}


def top_k(dets: list[Detection], k: int) -> list[int]:
    """Indices of the ``k`` best-scored detections (ties: earlier index)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    return order[:k]


def wild_couple(dets, gt, k: int = DEFAULT_TOP_K, iou_threshold: float = FOUND_IOU) -> WildAssignment:
    """One-to-one, IoU-greedy matching of ground-truth boxes to top-k detections."""
    by_image: dict[str, list] = {}
    for s in gt.samples:
        by_image.setdefault(s.image, []).append(s)
    matches: dict[str, tuple[str, int] | None] = {s.sample_id: None for s in gt.samples}
    for image, samples in by_image.items():
        cand = dets.get(image, [])
        kept = top_k(cand, k)
        pairs = []
        for gi, s in enumerate(samples):
            for di in kept:
                v = iou(s.bbox, cand[di].box)
                if v >= iou_threshold:
                    pairs.append((-v, gi, di))
        pairs.sort()
        used_g, used_d = set(), set()
        for _, gi, di in pairs:
            if gi in used_g or di in used_d:
                continue
            used_g.add(gi)
            used_d.add(di)
            matches[samples[gi].sample_id] = (image, di)
    return WildAssignment(matches)
