"""Two-stage training of the toy aggregator: L1 warm-up, then UAFL finetune.

Each epoch is one full-batch gradient-descent step over the training scenes
with a fixed step size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .costvol import (
    AggregatorParams,
    CostKind,
    CostVolume,
    DisparityGrid,
    aggregate_learned,
    aggregate_learned_backward,
    build_cost_volume,
)
from .distrib import cost_to_distribution, regress_disparity
from .lf_io import DisparityMap, LightField
from .loss import LossConfig, LossKind, compute_loss, loss_backward
from .metrics import MetricConfig, badpix
from .pipeline import DEFAULT_SHARPNESS, normalize_costs
from .shift import Interpolation
from .synth import SceneKind, SceneSpec, Texture, render

Scene = Tuple[LightField, DisparityMap]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, stage: int):
        super().__init__(f"non-finite loss or parameters at step {step} (stage {stage})")
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    lr1: float = 3e-3
    lr2: float = 3e-4
    beta: float = 0.1
    seed: int = 0
    grid: DisparityGrid = DisparityGrid()
    stage2_loss: LossKind = LossKind.UAFL
    stop_gradient_through_U: bool = True
    n_filters: int = 4
    kernel: Tuple[int, int, int] = (3, 3, 3)
    init_scale: float = 0.01
    interpolation: Interpolation = Interpolation.BILINEAR
    cost: CostKind = CostKind.VARIANCE
    sharpness: float = DEFAULT_SHARPNESS
    eval_margin: int = 4

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if not (self.lr1 > 0 and self.lr2 > 0):
            raise ValueError("step sizes must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    def stage_loss(self, stage: int) -> LossConfig:
        if stage == 1:
            return LossConfig(LossKind.L1)
        return LossConfig(self.stage2_loss, self.beta, self.stop_gradient_through_U)


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    loss: float
    badpix_007: Optional[float]

    def to_json(self, kind: str, beta: float) -> str:
        return json.dumps(
            {
                "step": self.epoch,
                "epoch": self.epoch,
                "stage": self.stage,
                "kind": kind,
                "scalar": self.loss,
                "beta": beta,
                "badpix_0.07": self.badpix_007,
            },
            sort_keys=True,
        )


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)
    kinds: List[str] = field(default_factory=list)
    betas: List[float] = field(default_factory=list)

    def append(self, record: EpochRecord, kind: str, beta: float) -> None:
        self.records.append(record)
        self.kinds.append(kind)
        self.betas.append(beta)

    def __len__(self):
        return len(self.records)

    def jsonl(self) -> str:
        return "".join(
            r.to_json(k, b) + "\n" for r, k, b in zip(self.records, self.kinds, self.betas)
        )

    def stage_records(self, stage: int) -> List[EpochRecord]:
        return [r for r in self.records if r.stage == stage]


def init_params(
    seed: int, n_filters: int = 4, kernel: Tuple[int, int, int] = (3, 3, 3), scale: float = 0.01
) -> AggregatorParams:
    """Pass-through aggregator plus seeded perturbations of size ``scale``.

    ``scale = 0`` gives the exact identity aggregator (for nonnegative costs).
    """
    base = AggregatorParams.identity(n_filters, kernel)
    rng = np.random.default_rng(seed)
    filters = base.filters + scale * rng.standard_normal(base.filters.shape)
    projection = base.projection.copy()
    projection[1:] = scale * rng.standard_normal(n_filters - 1)
    return AggregatorParams(filters, base.biases.copy(), projection)


def prepare(scene: Scene, config: TrainConfig) -> Tuple[CostVolume, DisparityMap]:
    lf, gt = scene
    cv = build_cost_volume(lf, config.grid, config.interpolation, config.cost)
    return normalize_costs(cv, config.sharpness), gt


def predict(cv: CostVolume, params: AggregatorParams) -> DisparityMap:
    return regress_disparity(cost_to_distribution(aggregate_learned(cv, params)))


def heldout_badpix(cv, gt, params, margin: int, epsilon: float = 0.07) -> float:
    return badpix(predict(cv, params), gt, epsilon, MetricConfig(border_margin=margin))


def _batch_step(prepared, params: AggregatorParams, loss_config: LossConfig):
    total = 0.0
    grad = np.zeros_like(params.flat())
    # overflow shows up as a non-finite loss, which the caller reports
    with np.errstate(over="ignore", invalid="ignore"):
        for cv, gt in prepared:
            out = aggregate_learned(cv, params)
            total += compute_loss(out, gt, loss_config).scalar
            g_out = loss_backward(out, gt, loss_config)
            _, g_params = aggregate_learned_backward(cv, params, g_out)
            grad += g_params.flat()
    n = len(prepared)
    return total / n, grad / n


def train(
    config: TrainConfig,
    scenes: Sequence[Scene],
    holdout: Optional[Scene] = None,
    params: Optional[AggregatorParams] = None,
) -> Tuple[AggregatorParams, TrainTrace]:
    """Run stage 1 (L1) then stage 2 (``config.stage2_loss``).

    Each trace record holds the batch loss before that epoch's update and
    the held-out BadPix 0.07 after it.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    if params is None:
        params = init_params(config.seed, config.n_filters, config.kernel, config.init_scale)
    prepared = [prepare(s, config) for s in scenes]
    held = prepare(holdout, config) if holdout is not None else None

    trace = TrainTrace()
    step = 0
    schedule = [(1, config.stage1_epochs, config.lr1), (2, config.stage2_epochs, config.lr2)]
    for stage, epochs, lr in schedule:
        loss_config = config.stage_loss(stage)
        for _ in range(epochs):
            loss, grad = _batch_step(prepared, params, loss_config)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(step, stage)
            flat = params.flat() - lr * grad
            if not np.all(np.isfinite(flat)):
                raise TrainingDiverged(step, stage)
            params = AggregatorParams.from_flat(flat, params.n_filters, params.kernel)
            bp = heldout_badpix(*held, params, config.eval_margin) if held else None
            trace.append(EpochRecord(step, stage, loss, bp), loss_config.label(), loss_config.beta)
            step += 1
    return params, trace


def synthetic_dataset(
    seed: int,
    n_train: int = 4,
    angular_dims=(3, 3),
    spatial_dims=(32, 32),
) -> Tuple[List[SceneSpec], SceneSpec]:
    """Seeded two-plane training scenes and one held-out scene."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_train + 1):
        bg = float(rng.uniform(-2.0, 0.5))
        fg = float(bg + rng.uniform(0.6, 1.6))
        texture = Texture.CHECKER_NOISE if i % 2 == 0 else Texture.SINUSOID
        specs.append(
            SceneSpec(
                SceneKind.TWO_PLANE_OCCLUSION,
                (round(fg, 3), round(bg, 3)),
                texture,
                seed * 1000 + i,
                angular_dims,
                spatial_dims,
            )
        )
    return specs[:n_train], specs[n_train]


def render_dataset(specs) -> List[Scene]:
    return [render(s) for s in specs]
