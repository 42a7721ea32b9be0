from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import SamplerError, ValidationError
from .losses import BatchSpec
from .model import (
    OBJECTIVES,
    LossConfig,
    ModelConfig,
    ModelParams,
    SampleInputs,
    init_params,
    loss_gradients,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "ppbm"
    loss: LossConfig = field(default_factory=LossConfig)
    batch: BatchSpec = field(default_factory=lambda: BatchSpec(P=4, K=4))
    lr: float = 0.005
    epochs: int = 30
    batches_per_epoch: int = 16
    fixed_schedule: bool = True
    seed: int = 0
    embed_dim: int = 107
    part_dim: int = 32
    local_dim: int = 32
    n_columns: int = 8
    gate_hidden: int = 8

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batches_per_epoch < 1:
            raise ValidationError("batches_per_epoch must be >= 1")

    def model_config(self, in_channels: int) -> ModelConfig:
        return ModelConfig(
            in_channels=in_channels,
            embed_dim=self.embed_dim,
            part_dim=self.part_dim,
            local_dim=self.local_dim,
            n_columns=self.n_columns,
            gate_hidden=self.gate_hidden,
            aggregation=self.loss.aggregation,
        )

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ModelParams
    initial: ModelParams
    loss_log: list[float]


class PKSampler:
    """Draws P entities x K samples per batch with a seeded generator."""

    def __init__(self, labels, spec: BatchSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        by_entity: dict[str, list[int]] = {}
        for i, e in enumerate(labels):
            by_entity.setdefault(e, []).append(i)
        for e in sorted(by_entity):
            if len(by_entity[e]) < spec.K:
                raise SamplerError(
                    f"entity {e!r} has {len(by_entity[e])} samples, fewer than K={spec.K}"
                )
        if len(by_entity) < spec.P:
            raise SamplerError(f"only {len(by_entity)} entities, fewer than P={spec.P}")
        self.entities = sorted(by_entity)
        self.by_entity = {e: np.array(v) for e, v in by_entity.items()}

    def batch(self, entity_order) -> list[int]:
        idx = []
        for k in entity_order:
            pool = self.by_entity[self.entities[k]]
            idx.extend(self.rng.choice(pool, size=self.spec.K, replace=False).tolist())
        return idx

    def draw(self, n_batches: int) -> list[list[int]]:
        p = self.spec.P
        return [
            self.batch(self.rng.choice(len(self.entities), size=p, replace=False))
            for _ in range(n_batches)
        ]


def train_toy(inputs: SampleInputs, cfg: TrainConfig) -> TrainResult:
    """Plain gradient descent with a fixed step on P x K batches.

    With ``fixed_schedule`` the batches are drawn once and replayed every
    epoch, which keeps the per-epoch mean loss comparable across epochs.
    """
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model_config(inputs.gap.shape[1]), int(rng.integers(2**31)))
    initial = params.copy()
    sampler = PKSampler(inputs.labels, cfg.batch, rng)
    schedule = sampler.draw(cfg.batches_per_epoch) if cfg.fixed_schedule else None
    loss_log = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in schedule or sampler.draw(cfg.batches_per_epoch):
            batch = inputs.take(idx)
            breakdown, grads, _ = loss_gradients(params, batch, cfg.loss, cfg.objective)
            for name, g in grads.items():
                getattr(params, name)[...] -= cfg.lr * g
            losses.append(breakdown.total)
        params.check_finite()
        loss_log.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.6f", epoch, loss_log[-1])
    return TrainResult(params, initial, loss_log)
