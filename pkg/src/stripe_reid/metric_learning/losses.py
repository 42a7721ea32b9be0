"""Triplet-family losses with their subgradients.

Gradients treat every discrete choice (hardest positive/negative, DP
alignment path) as fixed, and a hinge sitting exactly at zero contributes
nothing.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import BatchShapeError, ValidationError
from .distances import _pair, local_cost_matrix, pairwise_distances


@dataclass(frozen=True)
class BatchSpec:
    P: int
    K: int

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise BatchShapeError(f"TriHard needs P >= 2 and K >= 2, got P={self.P}, K={self.K}")


def batch_spec(labels) -> BatchSpec:
    """Infer and check the P x K layout of ``labels``."""
    counts = Counter(labels)
    sizes = set(counts.values())
    if len(sizes) != 1:
        raise BatchShapeError(f"unequal samples per identity: {dict(counts)}")
    return BatchSpec(P=len(counts), K=sizes.pop())


def _unit(diff: np.ndarray, dist: float) -> np.ndarray:
    # d||x|| / dx at x = 0 is taken as 0.
    return diff / dist if dist > 0 else np.zeros_like(diff)


# -- plain triplet -----------------------------------------------------------


def triplet_loss(a, p, n, margin: float) -> float:
    return triplet_loss_grad(a, p, n, margin)[0]


def triplet_loss_grad(a, p, n, margin: float):
    """Return ``(loss, (grad_a, grad_p, grad_n))``."""
    a, p = _pair(a, p)
    a, n = _pair(a, n)
    dap_vec, dan_vec = a - p, a - n
    dap = float(np.sqrt(dap_vec @ dap_vec))
    dan = float(np.sqrt(dan_vec @ dan_vec))
    arg = dap - dan + margin
    if arg <= 0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    u_ap, u_an = _unit(dap_vec, dap), _unit(dan_vec, dan)
    return arg, (u_ap - u_an, -u_ap, u_an)


# -- TriHard -----------------------------------------------------------------


@dataclass(frozen=True)
class TriHardResult:
    loss: float
    positives: np.ndarray
    negatives: np.ndarray
    hinge: np.ndarray
    dist: np.ndarray

    @property
    def active_triplets(self) -> list[tuple[int, int, int]]:
        """``(anchor, hardest positive, hardest negative)`` for every active hinge."""
        return [
            (a, int(self.positives[a]), int(self.negatives[a]))
            for a in range(len(self.hinge))
            if self.hinge[a] > 0
        ]


def hard_mining(dist: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Farthest positive and nearest negative per anchor; ties -> lowest index."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = np.argmax(np.where(same, dist, -np.inf), axis=1)
    neg = np.argmin(np.where(same, np.inf, dist), axis=1)
    return pos, neg


def trihard_loss(emb: np.ndarray, labels, margin: float) -> TriHardResult:
    emb = np.asarray(emb, dtype=np.float64)
    labels = list(labels)
    if emb.ndim != 2 or emb.shape[0] != len(labels):
        raise BatchShapeError(f"embeddings {emb.shape} do not match {len(labels)} labels")
    batch_spec(labels)
    dist = pairwise_distances(emb)
    pos, neg = hard_mining(dist, labels)
    idx = np.arange(len(labels))
    hinge = margin + dist[idx, pos] - dist[idx, neg]
    loss = float(np.sum(np.maximum(hinge, 0.0)))
    return TriHardResult(loss, pos, neg, hinge, dist)


def trihard_grad(emb: np.ndarray, labels, margin: float) -> tuple[TriHardResult, np.ndarray]:
    emb = np.asarray(emb, dtype=np.float64)
    res = trihard_loss(emb, labels, margin)
    grad = np.zeros_like(emb)
    for a, p, n in res.active_triplets:
        u_ap = _unit(emb[a] - emb[p], res.dist[a, p])
        u_an = _unit(emb[a] - emb[n], res.dist[a, n])
        grad[a] += u_ap - u_an
        grad[p] -= u_ap
        grad[n] += u_an
    return res, grad


# -- aligned local distance --------------------------------------------------


def shortest_path(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Monotone (down/right) min-cost path from the top-left to the bottom-right.

    On equal predecessors the step from the left (same row) wins. Path cells
    are 0-based ``(i, j)`` pairs ordered from start to end.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    if m == 0 or n == 0:
        raise ValidationError("empty cost matrix")
    s = np.empty_like(cost)
    for i in range(m):
        for j in range(n):
            if i == 0 and j == 0:
                s[i, j] = cost[i, j]
            elif j == 0:
                s[i, j] = s[i - 1, j] + cost[i, j]
            elif i == 0:
                s[i, j] = s[i, j - 1] + cost[i, j]
            else:
                s[i, j] = min(s[i - 1, j], s[i, j - 1]) + cost[i, j]
    path = [(m - 1, n - 1)]
    i, j = m - 1, n - 1
    while (i, j) != (0, 0):
        if i == 0 or (j > 0 and s[i, j - 1] <= s[i - 1, j]):
            j -= 1
        else:
            i -= 1
        path.append((i, j))
    path.reverse()
    return float(s[m - 1, n - 1]), path


def local_distance_dp(fx: np.ndarray, fy: np.ndarray):
    """Aligned local distance between two equal-length part sequences.

    Returns ``(distance, path)``.
    """
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.shape != fy.shape or fx.ndim != 2 or fx.shape[0] == 0:
        raise ValidationError(f"need two non-empty sequences of equal shape, got {fx.shape} and {fy.shape}")
    cost, _ = local_cost_matrix(fx, fy)
    return shortest_path(cost)


def local_distance_grad(fx: np.ndarray, fy: np.ndarray):
    """Return ``(distance, path, grad_fx, grad_fy)`` with the path held fixed."""
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.shape != fy.shape or fx.ndim != 2 or fx.shape[0] == 0:
        raise ValidationError(f"need two non-empty sequences of equal shape, got {fx.shape} and {fy.shape}")
    cost, r = local_cost_matrix(fx, fy)
    value, path = shortest_path(cost)
    gx, gy = np.zeros_like(fx), np.zeros_like(fy)
    for i, j in path:
        # d tanh(r/2) / dr = (1 - tanh^2) / 2
        coef = 0.5 * (1.0 - cost[i, j] ** 2)
        u = _unit(fx[i] - fy[j], r[i, j])
        gx[i] += coef * u
        gy[j] -= coef * u
    return value, path, gx, gy


@dataclass(frozen=True)
class AlignedLosses:
    l_th: float
    l_local: float
    trihard: TriHardResult
    local_hinge: np.ndarray
    d_local_pos: np.ndarray
    d_local_neg: np.ndarray

    @property
    def total(self) -> float:
        return self.l_th + self.l_local


def aligned_losses(emb, seqs, labels, margin: float) -> AlignedLosses:
    return aligned_losses_grad(emb, seqs, labels, margin, need_grad=False)[0]


def aligned_losses_grad(emb, seqs, labels, margin: float, need_grad: bool = True):
    """TriHard on globals plus a local-distance hinge on the same triplets.

    ``seqs`` has shape ``(N, W, D_l)``. Returns ``(result, grad_emb, grad_seqs)``.
    """
    seqs = np.asarray(seqs, dtype=np.float64)
    if need_grad:
        th, g_emb = trihard_grad(emb, labels, margin)
    else:
        th, g_emb = trihard_loss(emb, labels, margin), None
    n = len(th.positives)
    if seqs.ndim != 3 or seqs.shape[0] != n:
        raise BatchShapeError(f"local sequences {seqs.shape} do not match batch of {n}")
    g_seqs = np.zeros_like(seqs) if need_grad else None
    d_pos, d_neg, hinge = np.empty(n), np.empty(n), np.empty(n)
    for a in range(n):
        p, q = int(th.positives[a]), int(th.negatives[a])
        dp, _, gap, gp = local_distance_grad(seqs[a], seqs[p])
        dn, _, gan, gn = local_distance_grad(seqs[a], seqs[q])
        d_pos[a], d_neg[a] = dp, dn
        hinge[a] = dp - dn + margin
        if need_grad and hinge[a] > 0:
            g_seqs[a] += gap - gan
            g_seqs[p] += gp
            g_seqs[q] -= gn
    l_local = float(np.sum(np.maximum(hinge, 0.0)))
    return AlignedLosses(th.loss, l_local, th, hinge, d_pos, d_neg), g_emb, g_seqs


# -- softmax cross-entropy head ----------------------------------------------


def cross_entropy_grad(logits: np.ndarray, classes) -> tuple[float, np.ndarray]:
    """Summed softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes, dtype=int)
    if classes.max(initial=-1) >= logits.shape[1] or classes.min(initial=0) < 0:
        raise ValidationError(f"class index outside 0..{logits.shape[1] - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = np.arange(len(classes))
    loss = float(-logp[idx, classes].sum())
    grad = np.exp(logp)
    grad[idx, classes] -= 1.0
    return loss, grad


def cross_entropy_loss(logits, classes) -> float:
    return cross_entropy_grad(logits, classes)[0]
