import json

import numpy as np
import pytest
from conftest import make_sample
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import box_iou, brute_detection_ap

from stripe_reid.errors import SchemaError, ValidationError
from stripe_reid.evaluation.detection import (
    Detection,
    detection_eval,
    gt_boxes,
    interpolated_ap,
    iou,
    parse_detections,
    ppf,
    pr_curve,
)
from stripe_reid.evaluation.wild import top_k, wild_couple
from stripe_reid.geometry import Rect
from stripe_reid.manifest import Dataset


def test_iou_examples():
    a = Rect(0, 0, 1, 1)
    assert iou(a, a) == 1.0
    assert iou(a, Rect(2, 2, 3, 3)) == 0.0
    assert iou(a, Rect(0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)


@settings(max_examples=60)
@given(*(st.floats(0, 50) for _ in range(4)), *(st.floats(0.5, 30) for _ in range(4)))
def test_iou_matches_oracle(x1, y1, x2, y2, w1, h1, w2, h2):
    got = iou(Rect.from_xywh(x1, y1, w1, h1), Rect.from_xywh(x2, y2, w2, h2))
    assert got == pytest.approx(box_iou((x1, y1, w1, h1), (x2, y2, w2, h2)), abs=1e-12)
    assert 0 <= got <= 1


def test_ppf_rows():
    assert ppf(0.446, 1.2) == pytest.approx(0.0133, abs=5e-5)
    assert ppf(0.473, 1.25) == pytest.approx(0.0344, abs=5e-5)
    assert ppf(0.511, 1.1) == pytest.approx(0.0736, abs=5e-5)
    assert ppf(0.43, 3.0) == 0.0
    assert ppf(0.40, 1.0) < 0
    with pytest.raises(ValidationError):
        ppf(0.5, 0.0)


def test_pr_and_ap_basic():
    rec, prec = pr_curve([0.9, 0.8, 0.7], [True, False, True], 2)
    assert rec.tolist() == [0.5, 0.5, 1.0]
    assert prec.tolist() == pytest.approx([1.0, 0.5, 2 / 3])
    assert interpolated_ap(rec, prec) == pytest.approx(0.5 + 0.5 * 2 / 3)


def test_perfect_detections_score_one():
    gts = {"im0": [Rect(0, 0, 10, 10), Rect(20, 20, 30, 40)], "im1": [Rect(5, 5, 9, 9)]}
    dets = {im: [Detection(b, 0.3 + 0.1 * k) for k, b in enumerate(bs)] for im, bs in gts.items()}
    rep = detection_eval(dets, gts)
    assert rep.ap == [1.0] * 10 and rep.mAP == 1.0


def test_single_det_iou_point_six():
    gt = Rect(0, 0, 10, 10)
    det = Rect(0, 0, 10, 6)  # IoU 0.6
    rep = detection_eval({"im": [Detection(det, 1.0)]}, {"im": [gt]})
    assert rep.ap_at(0.5) == 1.0
    assert rep.ap_at(0.75) == 0.0


def random_instance(rng, n_boxes=10):
    gts, dets = {}, []
    for im in ("a", "b"):
        gts[im] = []
        for _ in range(n_boxes // 2):
            x, y = rng.uniform(0, 60, 2)
            w, h = rng.uniform(5, 25, 2)
            gts[im].append((x, y, w, h))
            for _ in range(int(rng.integers(0, 3))):
                jitter = rng.normal(0, 3, 4)
                dets.append((im, (x + jitter[0], y + jitter[1], max(1, w + jitter[2]), max(1, h + jitter[3])),
                             float(rng.integers(0, 6)) / 5))
    for _ in range(3):  # pure false positives
        dets.append(("a", (*rng.uniform(0, 60, 2), 8, 8), float(rng.random())))
    return gts, dets


def _to_sets(gts, dets):
    g = {im: [Rect.from_xywh(*b) for b in bs] for im, bs in gts.items()}
    d = {}
    for im, box, score in dets:
        d.setdefault(im, []).append(Detection(Rect.from_xywh(*box), score))
    return g, d


def _ordered(gts, dets):
    # keep detection order identical to the per-image grouping used by the evaluator
    return [(im, box, s) for im in sorted(gts) for (i2, box, s) in dets if i2 == im]


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(40):
        gts, dets = random_instance(rng)
        dets = _ordered(gts, dets)
        g, d = _to_sets(gts, dets)
        rep = detection_eval(d, g)
        for t, ap in zip(rep.thresholds, rep.ap):
            assert ap == pytest.approx(brute_detection_ap(dets, gts, t), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ap_invariant_under_monotone_score_map(seed):
    gts, dets = random_instance(np.random.default_rng(seed))
    g, d = _to_sets(gts, dets)
    warped = {im: [Detection(x.box, float(np.exp(3 * x.score) - 7)) for x in ds] for im, ds in d.items()}
    assert detection_eval(d, g).ap == detection_eval(warped, g).ap


def test_each_gt_matched_once():
    gt = Rect(0, 0, 10, 10)
    dets = [Detection(gt, 0.9), Detection(gt, 0.8)]
    rep = detection_eval({"im": dets}, {"im": [gt]})
    rec, prec = rep.curves[0]
    assert rec == [1.0, 1.0] and prec == [1.0, 0.5]


def test_parse_detections_schema():
    doc = {"images": [{"id": "a", "dets": [[0, 0, 10, 10, 0.5]]}]}
    out = parse_detections(json.dumps(doc))
    assert out["a"][0].box == Rect(0, 0, 10, 10)
    for bad in (
        "{not json",
        '{"images": {}}',
        '{"images": [{"id": "a", "dets": [[0, 0, 10, 10]]}]}',
        '{"images": [{"id": "a", "dets": [[0, 0, -1, 10, 0.3]]}]}',
    ):
        with pytest.raises(SchemaError):
            parse_detections(bad)


def test_gt_boxes_skips_detector_samples():
    ds = Dataset((make_sample("a", "A_left"), make_sample("b", "UNKNOWN", source="detector")))
    assert list(gt_boxes(ds)) == ["a"]


# -- wild coupling -----------------------------------------------------------


def _gt(*boxes):
    return Dataset(
        tuple(make_sample(f"t{i}", f"T{i}_left", bbox=b, image_id="img") for i, b in enumerate(boxes))
    )


def test_wild_perfect_detections():
    gt = _gt((0, 0, 10, 10), (50, 50, 10, 10))
    dets = {"img": [Detection(s.bbox, 0.9) for s in gt.samples]}
    a = wild_couple(dets, gt)
    assert a.found == {"t0", "t1"} and not a.missed


def test_wild_low_iou_not_found():
    gt = _gt((0, 0, 10, 10))
    # IoU 0.3 < 0.5
    dets = {"img": [Detection(Rect(0, 0, 3, 10), 0.9)]}
    assert wild_couple(dets, gt).missed == {"t0"}


def test_wild_only_top_k_eligible():
    gt = _gt((0, 0, 10, 10))
    decoys = [Detection(Rect(100 + 20 * i, 0, 110 + 20 * i, 10), 0.5 + 0.01 * i) for i in range(10)]
    dets = {"img": decoys + [Detection(Rect(0, 0, 10, 10), 0.1), Detection(Rect(0, 0, 10, 10), 0.05)]}
    assert len(top_k(dets["img"], 10)) == 10
    assert wild_couple(dets, gt, k=10).missed == {"t0"}
    assert wild_couple(dets, gt, k=11).found == {"t0"}


def test_wild_one_to_one():
    gt = _gt((0, 0, 10, 10), (1, 0, 10, 10))
    dets = {"img": [Detection(Rect(0, 0, 10, 10), 0.9)]}
    a = wild_couple(dets, gt)
    assert a.found == {"t0"} and a.missed == {"t1"}
