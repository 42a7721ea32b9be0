from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def _pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"length mismatch: {u.shape} vs {v.shape}")
    return u, v


def euclidean_distance(u, v) -> float:
    u, v = _pair(u, v)
    diff = u - v
    return float(np.sqrt(np.dot(diff, diff)))


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """All-pairs L2 distances between the rows of ``x``.

    Uses explicit differences rather than the Gram-matrix expansion so the
    diagonal is exactly zero and small distances keep full precision.
    """
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def scaled_tanh(r):
    """``(exp(r) - 1) / (exp(r) + 1)``, evaluated stably as ``tanh(r / 2)``."""
    return np.tanh(np.asarray(r, dtype=np.float64) / 2.0)


def local_elementwise_distance(fi, fj) -> float:
    return float(scaled_tanh(euclidean_distance(fi, fj)))


def local_cost_matrix(fx: np.ndarray, fy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise costs ``d[i, j]`` between two part sequences.

    Returns ``(d, r)`` where ``r`` holds the raw L2 distances.
    """
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.ndim != 2 or fy.ndim != 2 or fx.shape[1] != fy.shape[1]:
        raise ValidationError(f"incompatible sequences {fx.shape} and {fy.shape}")
    diff = fx[:, None, :] - fy[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return scaled_tanh(r), r
