import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_local_distance, brute_trihard, monotone_paths

from stripe_reid.errors import BatchShapeError, ValidationError
from stripe_reid.metric_learning.aggregation import Gate, aggregate_attention, aggregate_concat
from stripe_reid.metric_learning.distances import (
    euclidean_distance,
    local_elementwise_distance,
    pairwise_distances,
    scaled_tanh,
)
from stripe_reid.metric_learning.losses import (
    BatchSpec,
    cross_entropy_loss,
    local_distance_dp,
    shortest_path,
    trihard_loss,
    triplet_loss,
)


def random_batch(rng, max_p=4, max_k=4, dim=None):
    p, k = int(rng.integers(2, max_p + 1)), int(rng.integers(2, max_k + 1))
    d = dim or int(rng.integers(2, 9))
    labels = [f"e{i}" for i in range(p) for _ in range(k)]
    order = rng.permutation(len(labels))
    labels = [labels[i] for i in order]
    return rng.standard_normal((p * k, d)), labels


# -- distances ---------------------------------------------------------------


def test_euclidean_basic():
    assert euclidean_distance([0, 0], [3, 4]) == 5.0
    assert euclidean_distance([1, 2, 3], [1, 2, 3]) == 0.0
    with pytest.raises(ValidationError):
        euclidean_distance([1, 2], [1, 2, 3])


def test_scaled_tanh_values():
    assert scaled_tanh(0.0) == 0.0
    assert scaled_tanh(1.0) == pytest.approx((math.e - 1) / (math.e + 1))
    assert scaled_tanh(800.0) == 1.0  # no overflow
    assert local_elementwise_distance([0, 0], [3, 4]) == pytest.approx(math.tanh(2.5))


@settings(max_examples=40)
@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 10_000))
def test_pairwise_matches_scalar(n, d, seed):
    x = np.random.default_rng(seed).standard_normal((n, d))
    full = pairwise_distances(x)
    assert np.all(np.diag(full) == 0)
    for i in range(n):
        for j in range(n):
            assert full[i, j] == pytest.approx(euclidean_distance(x[i], x[j]), abs=1e-12)


# -- triplet -----------------------------------------------------------------


def test_triplet_examples():
    a, p, n = [0, 0], [1, 0], [3, 0]
    assert triplet_loss(a, p, n, 0.3) == 0.0
    assert triplet_loss(a, [2.9, 0], n, 0.3) == pytest.approx(0.2)


def test_trihard_hand_batch():
    emb = np.array([[0.0], [1.0], [1.5], [4.0]])
    res = trihard_loss(emb, ["a", "a", "b", "b"], 0.3)
    assert res.positives.tolist() == [1, 0, 3, 2]
    assert res.negatives.tolist() == [2, 2, 1, 1]
    # anchor 0: 0.3 + 1 - 1.5 < 0; anchor 1: 0.3 + 1 - 0.5 = 0.8
    # anchor 2: 0.3 + 2.5 - 0.5 = 2.3; anchor 3: 0.3 + 2.5 - 3 < 0
    assert res.loss == pytest.approx(0.8 + 2.3)
    assert [t[0] for t in res.active_triplets] == [1, 2]


def test_trihard_matches_brute_force_200_batches():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        emb, labels = random_batch(rng)
        margin = float(rng.uniform(0, 1))
        res = trihard_loss(emb, labels, margin)
        loss, pos, neg = brute_trihard(emb, labels, margin)
        assert res.positives.tolist() == pos
        assert res.negatives.tolist() == neg
        assert abs(res.loss - loss) <= 1e-12


def test_trihard_ties_pick_lowest_index():
    emb = np.array([[0.0], [1.0], [-1.0], [5.0], [5.0], [6.0]])
    res = trihard_loss(emb, ["a", "a", "a", "b", "b", "b"], 0.3)
    # for anchor 0 the positives at +1 and -1 tie
    assert res.positives[0] == 1
    # for anchor 1 the negatives at 5 tie (indices 3 and 4)
    assert res.negatives[1] == 3


@pytest.mark.parametrize("labels", [["a", "b", "c"], ["a", "a", "a", "b"], ["a", "a"]])
def test_trihard_rejects_bad_layout(labels):
    with pytest.raises(BatchShapeError):
        trihard_loss(np.zeros((len(labels), 2)), labels, 0.3)


def test_batch_spec_validation():
    with pytest.raises(BatchShapeError):
        BatchSpec(P=1, K=4)
    with pytest.raises(BatchShapeError):
        BatchSpec(P=4, K=1)


# -- shortest path / local distance -----------------------------------------


def test_path_count_for_5x5_is_70():
    assert sum(1 for _ in monotone_paths(5, 5)) == 70


def test_shortest_path_on_hand_grid():
    cost = np.array([[1.0, 9.0, 9.0], [1.0, 1.0, 9.0], [9.0, 1.0, 1.0]])
    value, path = shortest_path(cost)
    assert value == 5.0
    assert path == [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]


def test_shortest_path_single_cell():
    assert shortest_path(np.array([[0.25]])) == (0.25, [(0, 0)])


def test_constant_sequences_have_zero_local_distance(rng):
    f = np.tile(rng.standard_normal(4), (6, 1))
    value, path = local_distance_dp(f, f)
    assert value == 0.0
    assert path[0] == (0, 0) and path[-1] == (5, 5)


def test_local_distance_matches_enumeration_100_fields():
    rng = np.random.default_rng(99)
    for _ in range(100):
        w = int(rng.integers(1, 7))
        d = int(rng.integers(1, 6))
        fx, fy = rng.standard_normal((w, d)), rng.standard_normal((w, d))
        value, path = local_distance_dp(fx, fy)
        oracle = brute_local_distance(fx.tolist(), fy.tolist())
        assert abs(value - oracle) <= 1e-12
        assert len(path) == 2 * w - 1


def test_local_distance_bounds(rng):
    fx, fy = rng.standard_normal((6, 3)), 100 + rng.standard_normal((6, 3))
    value, _ = local_distance_dp(fx, fy)
    assert 0 <= value <= 2 * 6 - 1
    assert value == pytest.approx(11.0)


# -- aggregation -------------------------------------------------------------


def test_concat_layout():
    y = np.arange(7 * 2, dtype=float).reshape(7, 2)
    vis = np.ones(7, dtype=bool)
    vis[3] = False
    z = aggregate_concat(y, vis)
    assert z.shape == (14,)
    assert z[:6].tolist() == [0, 1, 2, 3, 4, 5]
    assert z[6:8].tolist() == [0, 0]


def test_concat_unequal_lengths():
    with pytest.raises(ValidationError):
        aggregate_concat([np.zeros(3)] * 6 + [np.zeros(2)])


def test_attention_sigmoid_half_with_zero_gate(rng):
    y = rng.standard_normal((7, 3))
    vis = np.ones(7, dtype=bool)
    vis[0] = False
    z, alphas = aggregate_attention(y, vis, Gate.zeros(4))
    assert alphas[0] == 0.0
    np.testing.assert_allclose(alphas[1:], 0.5)
    np.testing.assert_allclose(z, 0.5 * y[1:].sum(axis=0))


def test_attention_against_explicit_formula(rng):
    y = rng.standard_normal((7, 5))
    vis = rng.random(7) > 0.3
    gate = Gate(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3), np.array(0.2))
    z, alphas = aggregate_attention(y, vis, gate)
    for i in range(7):
        m = float(np.mean(y[i]))
        h = [max(0.0, gate.w1[k] * m + gate.b1[k]) for k in range(3)]
        logit = sum(gate.w2[k] * h[k] for k in range(3)) + 0.2
        expect = 1 / (1 + math.exp(-logit)) if vis[i] else 0.0
        assert alphas[i] == pytest.approx(expect, abs=1e-14)
    np.testing.assert_allclose(z, (alphas[:, None] * y).sum(axis=0), atol=1e-14)


# -- cross entropy -------------------------------------------------------------


def test_cross_entropy_uniform():
    assert cross_entropy_loss(np.zeros((2, 4)), [0, 3]) == pytest.approx(2 * math.log(4))
    with pytest.raises(ValidationError):
        cross_entropy_loss(np.zeros((1, 4)), [4])
