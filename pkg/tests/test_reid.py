import numpy as np
import pytest
from conftest import make_sample
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_reid

from stripe_reid.errors import LookupFailure, ProtocolError, ValidationError
from stripe_reid.evaluation.reid import average_precision, build_query, cmc_curve, evaluate_reid
from stripe_reid.manifest import Dataset


def test_ap_examples():
    assert average_precision([True]) == 1.0
    assert average_precision([True, False, True]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([False, False, True]) == pytest.approx(1 / 3)
    with pytest.raises(ProtocolError):
        average_precision([False, False])
    with pytest.raises(ProtocolError):
        average_precision([])


@pytest.mark.parametrize(
    "camera, dt, excluded",
    [("c0", 500, True), ("c0", -1000, True), ("c0", 1500, False), ("c1", 0, False)],
)
def test_temporal_exclusion(camera, dt, excluded):
    q = make_sample("q", "A_left", t=10_000)
    g = make_sample("g", "A_left", camera=camera, t=10_000 + dt)
    res = build_query(q, [q, g], {"q": [0.0], "g": [1.0]})
    assert ("g" in res.excluded) is excluded
    assert ("g" in [sid for sid, _ in res.ranked]) is not excluded
    assert "q" not in [sid for sid, _ in res.ranked]


def test_ties_broken_by_sample_id():
    q = make_sample("q", "A_left")
    gallery = [make_sample(s, "B_left", camera="c1") for s in ("z", "b", "m")]
    res = build_query(q, [q, *gallery], {"q": [0.0], "z": [1.0], "b": [1.0], "m": [1.0]})
    assert [sid for sid, _ in res.ranked] == ["b", "m", "z"]


def test_missing_embedding_names_sample():
    q = make_sample("q", "A_left")
    with pytest.raises(LookupFailure, match="'g'"):
        build_query(q, [make_sample("g", "A_left", camera="c1")], {"q": [0.0]})


def _one_hot_dataset():
    samples = [
        make_sample("a1", "A_left", t=0),
        make_sample("a2", "A_left", t=5000),
        make_sample("b1", "B_left", camera="c1", t=0),
        make_sample("b2", "B_left", camera="c2", t=0),
    ]
    emb = {"a1": [1, 0], "a2": [1, 0], "b1": [0, 1], "b2": [0, 1]}
    return Dataset(tuple(samples)), emb


def test_perfect_one_hot():
    ds, emb = _one_hot_dataset()
    rep = evaluate_reid(ds, emb)
    for cat in ("single_cam", "cross_cam", "overall"):
        assert rep[cat].mAP == 1.0 and rep[cat].top1 == 1.0
        assert rep[cat].cmc == [1.0] * 20


def test_empty_category_is_absent():
    samples = [make_sample("a1", "A_left", t=0), make_sample("a2", "A_left", t=5000)]
    rep = evaluate_reid(Dataset(tuple(samples)), {"a1": [0.0], "a2": [1.0]})
    assert rep["cross_cam"] is None
    assert rep.to_json()["categories"]["cross_cam"] is None


def test_query_without_relevant_items_is_left_out():
    samples = [
        make_sample("a1", "A_left", t=0),
        make_sample("a2", "A_left", t=5000),
        make_sample("c1", "C_left", camera="c1", t=0),  # singleton entity
    ]
    rep = evaluate_reid(Dataset(tuple(samples)), {"a1": [0.0], "a2": [1.0], "c1": [0.5]})
    assert rep["overall"].n_queries == 3
    assert rep["overall"].n_evaluated == 2
    assert rep["overall"].mAP == pytest.approx(0.5)


def test_cmc_first_hit_at_three():
    q = make_sample("q", "A_left")
    gal = [make_sample(f"n{i}", "B_left", camera="c1") for i in range(2)]
    gal.append(make_sample("p", "A_left", camera="c1"))
    res = build_query(q, [q, *gal], {"q": [0.0], "n0": [1.0], "n1": [2.0], "p": [3.0]})
    curve = cmc_curve([res], max_rank=5)
    assert curve.tolist() == [0, 0, 1, 1, 1]


def random_instance(rng, n_max=50):
    n_ent = int(rng.integers(2, 8))
    samples = []
    for e in range(n_ent):
        side = "left" if e % 2 == 0 else "right"
        k = int(rng.integers(1, 7))
        for j in range(k):
            samples.append(
                make_sample(
                    f"s{e:02d}_{j}",
                    f"T{e}_{side}",
                    camera=f"c{int(rng.integers(0, 3))}",
                    t=int(rng.integers(0, 6)) * 700,
                    side=side,
                )
            )
    samples = samples[:n_max]
    samples.append(make_sample("unk", "UNKNOWN"))
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    dim = int(rng.integers(1, 4))
    vecs = {s.sample_id: rng.integers(0, 3, size=dim).astype(float) for s in samples}  # ties on purpose
    return Dataset(tuple(samples)), vecs


def compare_with_brute(ds, vecs, mode="plain", found=None):
    rep = evaluate_reid(ds, vecs, mode=mode, found=found)
    ref = brute_reid(ds.samples, vecs, mode=mode, found=found)
    worst = 0.0
    for cat, expect in ref.items():
        got = rep[cat]
        if expect is None:
            assert got is None
            continue
        worst = max(worst, abs(got.mAP - expect[0]), max(abs(a - b) for a, b in zip(got.cmc, expect[1])))
    return worst


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(50):
        ds, vecs = random_instance(rng)
        assert compare_with_brute(ds, vecs) <= 1e-12


def test_wild_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(30):
        ds, vecs = random_instance(rng)
        found = {s.sample_id for s in ds.samples if rng.random() < 0.7}
        assert compare_with_brute(ds, vecs, "wild", found) <= 1e-12


def test_wild_with_everything_found_equals_plain():
    rng = np.random.default_rng(9)
    ds, vecs = random_instance(rng)
    plain = evaluate_reid(ds, vecs)
    wild = evaluate_reid(ds, vecs, mode="wild", found=set(ds.ids))
    assert plain.to_json()["categories"] == wild.to_json()["categories"]


def wild_four_query_instance():
    """One entity with four images plus singleton distractors."""
    samples = [make_sample(f"a{i}", "A_left", camera=f"c{i}") for i in range(4)]
    samples += [make_sample(f"d{i}", f"D{i}_left", camera="c9", t=10_000 * i) for i in range(3)]
    vecs = {f"a{i}": [0.0] for i in range(4)}
    vecs.update({f"d{i}": [10.0 + i] for i in range(3)})
    return Dataset(tuple(samples)), vecs


def test_wild_one_miss_out_of_four():
    ds, vecs = wild_four_query_instance()
    full = evaluate_reid(ds, vecs, mode="wild", found=set(ds.ids))
    miss = evaluate_reid(ds, vecs, mode="wild", found=set(ds.ids) - {"a2"})
    assert full["overall"].n_evaluated == 4
    assert full["overall"].mAP == 1.0
    assert miss["overall"].mAP == 0.75
    assert miss["overall"].aps["a2"] == 0.0


def test_wild_needs_found_set():
    ds, vecs = wild_four_query_instance()
    with pytest.raises(ValidationError):
        evaluate_reid(ds, vecs, mode="wild")
    with pytest.raises(ValidationError):
        evaluate_reid(ds, vecs, mode="magic")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_same_camera_duplicate_changes_no_ap(seed):
    rng = np.random.default_rng(seed)
    ds, vecs = random_instance(rng, n_max=30)
    queries = [s for s in ds.samples if s.reid_eligible]
    for q in queries:
        dup = make_sample("zz_dup", q.entity_id, camera=q.camera_id, t=q.timestamp_ms, side=q.side)
        with_dup = dict(vecs, zz_dup=vecs[q.sample_id])
        before = build_query(q, queries, vecs)
        after = build_query(q, queries + [dup], with_dup)
        assert after.ap == before.ap
        assert "zz_dup" in after.excluded


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_report_invariants(seed):
    ds, vecs = random_instance(np.random.default_rng(seed))
    rep = evaluate_reid(ds, vecs)
    for cat in rep.categories.values():
        if cat is None:
            continue
        assert np.all(np.diff(cat.cmc) >= 0) and cat.cmc[-1] <= 1
        assert cat.top1 == cat.cmc[0] and cat.top5 == cat.cmc[4]
        assert 0 <= cat.mAP <= 1
        assert cat.mAP == pytest.approx(np.mean(list(cat.aps.values())), abs=1e-15)
