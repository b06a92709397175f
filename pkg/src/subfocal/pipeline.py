"""End-to-end disparity estimation: cost volume, aggregation, regression."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .costvol import (
    AggregatorParams,
    CostKind,
    CostVolume,
    DisparityGrid,
    aggregate_box,
    aggregate_learned,
    build_cost_volume,
    load_params,
)
from .distrib import DisparityDistribution, cost_to_distribution, regress_disparity
from .lf_io import DisparityMap, LightField
from .shift import Interpolation

# Photometric variances are O(1e-2); softmax(-C) over raw values is nearly
# flat. Costs are rescaled so that their volume median equals SHARPNESS.
DEFAULT_SHARPNESS = 10.0


@dataclass(frozen=True)
class Aggregation:
    """``none``, ``box`` with a radius, or ``learned`` with parameters."""

    mode: str = "box"
    radius: int = 1
    params: Optional[AggregatorParams] = None

    @classmethod
    def parse(cls, text: str) -> "Aggregation":
        if text == "none":
            return cls("none", 0)
        kind, _, arg = text.partition(":")
        if kind == "box":
            radius = int(arg) if arg else 1
            if radius < 0:
                raise ValueError("box radius must be nonnegative")
            return cls("box", radius)
        if kind == "learned" and arg:
            return cls("learned", 0, load_params(arg))
        raise ValueError(f"bad aggregation {text!r}; expected none, box:R or learned:PATH")


def normalize_costs(cv: CostVolume, sharpness: float = DEFAULT_SHARPNESS) -> CostVolume:
    med = float(np.median(cv.costs))
    if med <= 0:
        return cv.replace(cv.costs.copy())
    return cv.replace(cv.costs * (sharpness / med))


def aggregate(cv: CostVolume, agg: Aggregation) -> CostVolume:
    if agg.mode == "none":
        return cv
    if agg.mode == "box":
        return aggregate_box(cv, agg.radius)
    return aggregate_learned(cv, agg.params)


@dataclass
class Estimate:
    disparity: DisparityMap
    distribution: DisparityDistribution
    costs: CostVolume


def estimate(
    lf: LightField,
    grid: DisparityGrid = DisparityGrid(),
    interpolation: Union[str, Interpolation] = Interpolation.BILINEAR,
    cost: Union[str, CostKind] = CostKind.VARIANCE,
    agg: Aggregation = Aggregation(),
    sharpness: float = DEFAULT_SHARPNESS,
) -> Estimate:
    cv = normalize_costs(build_cost_volume(lf, grid, interpolation, cost), sharpness)
    cv = aggregate(cv, agg)
    dist = cost_to_distribution(cv)
    return Estimate(regress_disparity(dist), dist, cv)
