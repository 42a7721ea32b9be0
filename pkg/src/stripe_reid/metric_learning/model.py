"""A small linear embedder over pooled feature grids and its loss gradients.

Per sample the inputs are pre-pooled: the global average (C,), ``W`` column
bands (W, C) and seven part RAP vectors (7, C) with a visibility mask.
Everything downstream is affine, so backprop is written out by hand.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, SchemaError, ValidationError
from ..geometry import (
    DEFAULT_PART_MAP,
    NUM_PARTS,
    PartMap,
    column_pool,
    global_average_pool,
    part_features,
)
from .aggregation import Gate, aggregate_attention, aggregate_attention_backward, aggregate_concat
from .losses import aligned_losses_grad, cross_entropy_grad, trihard_grad, trihard_loss

CONCAT = "concat_a"
ATTENTION = "attention_b"
AGGREGATIONS = (CONCAT, ATTENTION)
OBJECTIVES = ("trihard", "aligned", "ppbm", "ce")


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.3
    lam: float = 1.0
    aggregation: str = CONCAT

    def __post_init__(self):
        if not (np.isfinite(self.margin) and self.margin >= 0):
            raise ValidationError(f"margin must be finite and >= 0, got {self.margin}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    embed_dim: int = 107
    part_dim: int = 32
    local_dim: int = 32
    n_columns: int = 8
    gate_hidden: int = 8
    aggregation: str = CONCAT

    @property
    def head_in(self) -> int:
        return NUM_PARTS * self.part_dim if self.aggregation == CONCAT else self.part_dim


@dataclass
class ModelParams:
    config: ModelConfig
    global_w: np.ndarray
    global_b: np.ndarray
    local_w: np.ndarray
    local_b: np.ndarray
    part_w: np.ndarray
    part_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    gate_w1: np.ndarray
    gate_b1: np.ndarray
    gate_w2: np.ndarray
    gate_b2: np.ndarray

    @classmethod
    def array_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls) if f.name != "config"]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.array_names()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, **{n: a.copy() for n, a in self.arrays().items()})

    @property
    def gate(self) -> Gate:
        return Gate(self.gate_w1, self.gate_b1, self.gate_w2, self.gate_b2)

    def check_finite(self):
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NumericalError(name)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    c, d, dp, dl, h = (
        config.in_channels,
        config.embed_dim,
        config.part_dim,
        config.local_dim,
        config.gate_hidden,
    )

    def fan_in(shape, n):
        return rng.standard_normal(shape) / np.sqrt(n)

    return ModelParams(
        config=config,
        global_w=fan_in((d, c), c),
        global_b=np.zeros(d),
        local_w=fan_in((dl, c), c),
        local_b=np.zeros(dl),
        part_w=fan_in((NUM_PARTS, dp, c), c),
        part_b=np.zeros((NUM_PARTS, dp)),
        head_w=fan_in((d, config.head_in), config.head_in),
        head_b=np.zeros(d),
        gate_w1=fan_in((h,), 1),
        gate_b1=np.zeros(h),
        gate_w2=fan_in((h,), h),
        gate_b2=np.zeros(()),
    )


@dataclass
class SampleInputs:
    """Pooled inputs for a set of samples, stacked along axis 0."""

    ids: list[str]
    labels: list[str]
    gap: np.ndarray
    cols: np.ndarray
    rap: np.ndarray
    vis: np.ndarray
    classes: np.ndarray | None = None
    meta: list[tuple[str, int]] = field(default_factory=list)

    def take(self, idx) -> "SampleInputs":
        idx = list(idx)
        return SampleInputs(
            ids=[self.ids[i] for i in idx],
            labels=[self.labels[i] for i in idx],
            gap=self.gap[idx],
            cols=self.cols[idx],
            rap=self.rap[idx],
            vis=self.vis[idx],
            classes=None if self.classes is None else self.classes[idx],
            meta=[self.meta[i] for i in idx] if self.meta else [],
        )


def extract_inputs(
    ds,
    grids,
    n_columns: int = 8,
    image_dims=(256, 128),
    part_map: PartMap = DEFAULT_PART_MAP,
) -> SampleInputs:
    """Pool every sample's grid into model inputs (order follows ``ds``)."""
    gap, cols, rap, vis = [], [], [], []
    for s in ds.samples:
        g = grids[s.sample_id]
        gap.append(global_average_pool(g))
        cols.append(column_pool(g, n_columns))
        if s.keypoints is None:
            rap.append(np.zeros((NUM_PARTS, g.shape[0])))
            vis.append(np.zeros(NUM_PARTS, dtype=bool))
        else:
            f, v = part_features(g, s.keypoints, image_dims, part_map)
            rap.append(f)
            vis.append(v)
    labels = [s.entity_id for s in ds.samples]
    classes = {e: k for k, e in enumerate(sorted(set(labels)))}
    return SampleInputs(
        ids=[s.sample_id for s in ds.samples],
        labels=labels,
        gap=np.array(gap),
        cols=np.array(cols),
        rap=np.array(rap),
        vis=np.array(vis),
        classes=np.array([classes[e] for e in labels], dtype=int),
        meta=[(s.camera_id, int(s.timestamp_ms)) for s in ds.samples],
    )


@dataclass
class Forward:
    emb: np.ndarray
    seqs: np.ndarray
    y: np.ndarray
    z: np.ndarray
    alphas: np.ndarray | None
    part_emb: np.ndarray


def part_transform(params: ModelParams, rap, vis) -> np.ndarray:
    y = np.einsum("pdc,npc->npd", params.part_w, rap) + params.part_b
    return y * vis[..., None]


def head_forward(y, vis, head_w, head_b, gate: Gate, aggregation: str):
    """Aggregate parts then apply the global transform; returns ``(emb, z, alphas)``."""
    if aggregation == CONCAT:
        z, alphas = aggregate_concat(y, vis), None
    else:
        z, alphas = aggregate_attention(y, vis, gate)
    return z @ head_w.T + head_b, z, alphas


def forward(params: ModelParams, inputs: SampleInputs) -> Forward:
    emb = inputs.gap @ params.global_w.T + params.global_b
    seqs = inputs.cols @ params.local_w.T + params.local_b
    y = part_transform(params, inputs.rap, inputs.vis)
    part_emb, z, alphas = head_forward(
        y, inputs.vis, params.head_w, params.head_b, params.gate, params.config.aggregation
    )
    return Forward(emb, seqs, y, z, alphas, part_emb)


# -- part-level losses (inputs: part vectors after f_i) ----------------------


def part_loss(y, vis, labels, head_w, head_b, gate, cfg: LossConfig) -> float:
    part_emb, _, _ = head_forward(y, vis, head_w, head_b, gate, cfg.aggregation)
    return trihard_loss(part_emb, labels, cfg.margin).loss


def part_loss_grad(y, vis, labels, head_w, head_b, gate, cfg: LossConfig):
    """Return ``(loss, dy, {head_w, head_b, gate_*})``."""
    y = np.asarray(y, dtype=np.float64)
    part_emb, z, _ = head_forward(y, vis, head_w, head_b, gate, cfg.aggregation)
    res, d_pe = trihard_grad(part_emb, labels, cfg.margin)
    grads = {"head_w": d_pe.T @ z, "head_b": d_pe.sum(axis=0)}
    dz = d_pe @ head_w
    if cfg.aggregation == CONCAT:
        dy = dz.reshape(y.shape) * np.asarray(vis)[..., None]
        g_gate = Gate(np.zeros_like(gate.w1), np.zeros_like(gate.b1), np.zeros_like(gate.w2), np.zeros(()))
    else:
        dy, g_gate = aggregate_attention_backward(y, vis, gate, dz)
    grads.update(gate_w1=g_gate.w1, gate_b1=g_gate.b1, gate_w2=g_gate.w2, gate_b2=g_gate.b2)
    return res.loss, dy, grads


def combined_loss(emb, y, vis, labels, head_w, head_b, gate, cfg: LossConfig) -> float:
    l_th = trihard_loss(emb, labels, cfg.margin).loss
    if cfg.lam == 0:
        return l_th
    return l_th + cfg.lam * part_loss(y, vis, labels, head_w, head_b, gate, cfg)


def combined_loss_grad(emb, y, vis, labels, head_w, head_b, gate, cfg: LossConfig):
    """Return ``(loss, d_emb, dy, head_grads)`` for ``L_TH + lambda * L_part``."""
    res, d_emb = trihard_grad(emb, labels, cfg.margin)
    l_part, dy, grads = part_loss_grad(y, vis, labels, head_w, head_b, gate, cfg)
    dy = cfg.lam * dy
    grads = {k: cfg.lam * v for k, v in grads.items()}
    return res.loss + cfg.lam * l_part, d_emb, dy, grads


# -- full model --------------------------------------------------------------


@dataclass
class LossBreakdown:
    total: float
    terms: dict[str, float]


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(name)


def loss_gradients(params: ModelParams, inputs: SampleInputs, cfg: LossConfig, objective: str):
    """Objective value, parameter gradients and gradients w.r.t. embeddings.

    Returns ``(LossBreakdown, param_grads, embedding_grads)``; both gradient
    containers are dicts of arrays keyed like ``ModelParams`` fields and
    ``Forward`` fields respectively.
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"objective must be one of {OBJECTIVES}")
    if objective == "ppbm" and cfg.aggregation != params.config.aggregation:
        raise ValidationError("loss aggregation does not match the model head")
    fw = forward(params, inputs)
    for name in ("emb", "seqs", "y", "part_emb"):
        _check(name, getattr(fw, name))
    labels = inputs.labels
    d_emb = np.zeros_like(fw.emb)
    d_seqs = np.zeros_like(fw.seqs)
    d_y = np.zeros_like(fw.y)
    head = {}
    terms = {}

    if objective == "trihard":
        res, d_emb = trihard_grad(fw.emb, labels, cfg.margin)
        terms["trihard"] = res.loss
    elif objective == "aligned":
        res, d_emb, d_seqs = aligned_losses_grad(fw.emb, fw.seqs, labels, cfg.margin)
        terms["trihard"], terms["local"] = res.l_th, res.l_local
    elif objective == "ppbm":
        res, d_emb = trihard_grad(fw.emb, labels, cfg.margin)
        l_part, d_y, head = part_loss_grad(
            fw.y, inputs.vis, labels, params.head_w, params.head_b, params.gate, cfg
        )
        d_y = cfg.lam * d_y
        head = {k: cfg.lam * v for k, v in head.items()}
        terms["trihard"], terms["part"] = res.loss, l_part
    else:
        if inputs.classes is None:
            raise ValidationError("cross-entropy objective needs class indices")
        terms["ce"], d_emb = cross_entropy_grad(fw.emb, inputs.classes)

    total = terms.get("trihard", 0.0) + terms.get("local", 0.0) + terms.get("ce", 0.0)
    total += cfg.lam * terms.get("part", 0.0)

    grads = {n: np.zeros_like(a) for n, a in params.arrays().items()}
    grads["global_w"] = d_emb.T @ inputs.gap
    grads["global_b"] = d_emb.sum(axis=0)
    grads["local_w"] = np.einsum("nwl,nwc->lc", d_seqs, inputs.cols)
    grads["local_b"] = d_seqs.sum(axis=(0, 1))
    grads.update(head)
    masked = d_y * inputs.vis[..., None]
    grads["part_w"] = np.einsum("npd,npc->pdc", masked, inputs.rap)
    grads["part_b"] = masked.sum(axis=0)
    for name, g in grads.items():
        _check(f"grad[{name}]", g)
    return LossBreakdown(float(total), terms), grads, {"emb": d_emb, "seqs": d_seqs, "y": d_y}


def eval_embeddings(params: ModelParams, inputs: SampleInputs, objective: str) -> np.ndarray:
    """Vectors used for retrieval; the part-based model appends its part branch."""
    fw = forward(params, inputs)
    if objective == "ppbm":
        return np.concatenate([fw.emb, fw.part_emb], axis=1)
    return fw.emb


# -- serialization -------------------------------------------------------------


def params_to_json(params: ModelParams) -> dict:
    return {
        "model": dataclasses.asdict(params.config),
        "arrays": {
            name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in params.arrays().items()
        },
    }


def params_from_json(obj: dict) -> ModelParams:
    try:
        config = ModelConfig(**obj["model"])
        arrays = {
            name: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
            for name, rec in obj["arrays"].items()
        }
        params = ModelParams(config, **arrays)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed parameter file: {exc}") from exc
    params.check_finite()
    return params
