"""Re-ID ranking metrics with temporal-adjacency exclusion.

Each test image is queried against every other test image. Gallery items
from the query's camera within one second of it are dropped before ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import LookupFailure, ProtocolError, ValidationError
from ..manifest import CROSS_CAM, SINGLE_CAM, Dataset, Sample

ADJACENCY_MS = 1000
PLAIN, WILD = "plain", "wild"
OVERALL = "overall"
DEFAULT_MAX_RANK = 20


def average_precision(flags) -> float:
    """Mean of precision-at-hit over every relevant position of a ranking."""
    rel = np.asarray(flags, dtype=bool)
    if not rel.any():
        raise ProtocolError("average precision is undefined without a relevant item")
    hits = np.cumsum(rel)[rel]
    ranks = np.flatnonzero(rel) + 1
    return float(np.mean(hits / ranks))


@dataclass
class QueryResult:
    query_id: str
    ranked: list[tuple[str, float]]
    excluded: list[str]
    relevant: list[bool]
    ap: float | None
    first_hit: int | None

    @property
    def has_relevant(self) -> bool:
        return any(self.relevant)


def _vector(embeddings: Mapping, sid: str) -> np.ndarray:
    try:
        v = embeddings[sid]
    except KeyError:
        raise LookupFailure(sid) from None
    return np.asarray(v, dtype=np.float64)


def temporally_adjacent(a: Sample, b: Sample) -> bool:
    return a.camera_id == b.camera_id and abs(a.timestamp_ms - b.timestamp_ms) <= ADJACENCY_MS


def build_query(query: Sample, gallery, embeddings: Mapping) -> QueryResult:
    """Rank ``gallery`` by global-embedding distance to ``query``.

    The query itself is never part of its own gallery. Ties are ordered by
    sample id.
    """
    q_vec = _vector(embeddings, query.sample_id)
    kept, excluded = [], []
    for g in gallery:
        if g.sample_id == query.sample_id:
            continue
        if temporally_adjacent(query, g):
            excluded.append(g.sample_id)
        else:
            kept.append(g)
    if kept:
        vecs = np.stack([_vector(embeddings, g.sample_id) for g in kept])
        if vecs.shape[1] != q_vec.shape[0]:
            raise ValidationError(f"embedding length mismatch for query {query.sample_id}")
        diff = vecs - q_vec
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    else:
        dists = np.zeros(0)
    order = sorted(range(len(kept)), key=lambda i: (dists[i], kept[i].sample_id))
    ranked = [(kept[i].sample_id, float(dists[i])) for i in order]
    relevant = [kept[i].entity_id == query.entity_id for i in order]
    if any(relevant):
        ap = average_precision(relevant)
        first = relevant.index(True) + 1
    else:
        ap, first = None, None
    return QueryResult(query.sample_id, ranked, excluded, relevant, ap, first)


def cmc_curve(results, max_rank: int = DEFAULT_MAX_RANK) -> np.ndarray:
    """Fraction of queries whose first relevant hit is at rank <= k, k = 1..max_rank."""
    results = list(results)
    if not results:
        raise ProtocolError("CMC needs at least one query")
    curve = np.zeros(max_rank)
    for r in results:
        if r.first_hit is not None and r.first_hit <= max_rank:
            curve[r.first_hit - 1 :] += 1
    return curve / len(results)


@dataclass
class CategoryReport:
    n_queries: int
    n_evaluated: int
    mAP: float
    top1: float
    top5: float
    cmc: list[float]
    aps: dict[str, float] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "n_evaluated": self.n_evaluated,
            "mAP": self.mAP,
            "top1": self.top1,
            "top5": self.top5,
            "cmc": self.cmc,
        }


@dataclass
class ReidReport:
    mode: str
    categories: dict[str, CategoryReport | None]

    def __getitem__(self, key) -> CategoryReport | None:
        return self.categories[key]

    @property
    def query_aps(self) -> dict[str, float]:
        overall = self.categories.get(OVERALL)
        return dict(overall.aps) if overall else {}

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "categories": {
                k: (None if v is None else v.to_json()) for k, v in self.categories.items()
            },
        }


def _summarize(results: list[QueryResult], aps: list[float], n_queries: int, max_rank: int):
    if not results:
        return None
    cmc = cmc_curve(results, max_rank)
    return CategoryReport(
        n_queries=n_queries,
        n_evaluated=len(results),
        mAP=float(np.mean(aps)),
        top1=float(cmc[0]),
        top5=float(cmc[min(4, max_rank - 1)]),
        cmc=[float(v) for v in cmc],
        aps={r.query_id: a for r, a in zip(results, aps)},
    )


def evaluate_reid(
    test: Dataset,
    embeddings: Mapping,
    mode: str = PLAIN,
    found=None,
    max_rank: int = DEFAULT_MAX_RANK,
) -> ReidReport:
    """Query every re-ID eligible test image against the rest of the test set.

    In ``wild`` mode ``found`` is the set of ground-truth sample ids that the
    detector recovered. Only those form the gallery; a query that was not
    found, or whose relevant images were all lost, scores AP 0. Queries with
    no relevant image even in the ground-truth gallery are left out of every
    average in both modes.
    """
    if mode not in (PLAIN, WILD):
        raise ValidationError(f"mode must be {PLAIN!r} or {WILD!r}")
    if mode == WILD and found is None:
        raise ValidationError("wild mode needs the set of detected samples")
    queries = [s for s in test.samples if s.reid_eligible]
    found = set(found) if found is not None else None
    wild_gallery = [s for s in queries if s.sample_id in found] if mode == WILD else None

    buckets: dict[str, tuple[list, list, list]] = {
        SINGLE_CAM: ([], [], [0]),
        CROSS_CAM: ([], [], [0]),
        OVERALL: ([], [], [0]),
    }
    for q in queries:
        cat = test.entity_category(q.entity_id)
        gt_has_relevant = any(
            g.entity_id == q.entity_id and g.sample_id != q.sample_id and not temporally_adjacent(q, g)
            for g in queries
        )
        for key in (cat, OVERALL):
            buckets[key][2][0] += 1
        if not gt_has_relevant:
            continue
        if mode == PLAIN:
            res = build_query(q, queries, embeddings)
            ap = res.ap
        elif q.sample_id not in found:
            res = QueryResult(q.sample_id, [], [], [], 0.0, None)
            ap = 0.0
        else:
            res = build_query(q, wild_gallery, embeddings)
            ap = res.ap if res.ap is not None else 0.0
        for key in (cat, OVERALL):
            buckets[key][0].append(res)
            buckets[key][1].append(ap)

    cats = {
        key: _summarize(results, aps, n[0], max_rank)
        for key, (results, aps, n) in buckets.items()
    }
    return ReidReport(mode, cats)
