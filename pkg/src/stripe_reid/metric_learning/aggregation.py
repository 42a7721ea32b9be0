"""Combining the seven part vectors into one representation.

Both functions accept a single sample ``(7, D_p)`` or a batch
``(N, 7, D_p)``; visibility masks follow the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..geometry import NUM_PARTS


@dataclass
class Gate:
    """Shared squeeze-excitation style gate: mean -> FC -> ReLU -> FC -> sigmoid."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "Gate":
        return cls(np.zeros(hidden), np.zeros(hidden), np.zeros(hidden), np.zeros(()))


def _check_parts(y, vis):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim < 2 or y.shape[-2] != NUM_PARTS:
        raise ValidationError(f"expected {NUM_PARTS} part vectors, got shape {y.shape}")
    if vis is None:
        vis = np.ones(y.shape[:-1], dtype=bool)
    vis = np.asarray(vis, dtype=bool)
    if vis.shape != y.shape[:-1]:
        raise ValidationError(f"visibility shape {vis.shape} does not match parts {y.shape}")
    return y, vis


def aggregate_concat(y, vis=None) -> np.ndarray:
    """Concatenate parts 1..7; masked parts contribute zeros."""
    if isinstance(y, (list, tuple)):
        lengths = {len(np.ravel(v)) for v in y}
        if len(lengths) != 1:
            raise ValidationError(f"part vectors of unequal length: {sorted(lengths)}")
        y = np.array(y, dtype=np.float64)
    y, vis = _check_parts(y, vis)
    masked = y * vis[..., None]
    return masked.reshape(*y.shape[:-2], -1)


def _gate_forward(y, vis, gate: Gate):
    squeeze = y.mean(axis=-1)
    pre = squeeze[..., None] * gate.w1 + gate.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ gate.w2 + gate.b2
    sig = 1.0 / (1.0 + np.exp(-logits))
    alphas = np.where(vis, sig, 0.0)
    return squeeze, pre, hidden, sig, alphas


def aggregate_attention(y, vis, gate: Gate) -> tuple[np.ndarray, np.ndarray]:
    """Weighted sum of parts with gate coefficients; returns ``(z, alphas)``."""
    y, vis = _check_parts(y, vis)
    *_, alphas = _gate_forward(y, vis, gate)
    z = np.einsum("...p,...pd->...d", alphas, y)
    return z, alphas


def aggregate_attention_backward(y, vis, gate: Gate, dz):
    """Gradients of a scalar w.r.t. ``y`` and the gate, given ``dL/dz``."""
    y, vis = _check_parts(y, vis)
    dz = np.asarray(dz, dtype=np.float64)
    squeeze, pre, hidden, sig, alphas = _gate_forward(y, vis, gate)
    d_alpha = np.einsum("...d,...pd->...p", dz, y)
    dy = alphas[..., None] * dz[..., None, :]
    d_logit = np.where(vis, d_alpha * sig * (1.0 - sig), 0.0)
    h = gate.w1.shape[0]
    d_w2 = (d_logit[..., None] * hidden).reshape(-1, h).sum(axis=0)
    d_b2 = np.asarray(d_logit.sum())
    d_pre = d_logit[..., None] * gate.w2 * (pre > 0)
    d_w1 = (d_pre * squeeze[..., None]).reshape(-1, h).sum(axis=0)
    d_b1 = d_pre.reshape(-1, h).sum(axis=0)
    d_squeeze = d_pre @ gate.w1
    dy += d_squeeze[..., None] / y.shape[-1]
    return dy, Gate(d_w1, d_b1, d_w2, d_b2)
