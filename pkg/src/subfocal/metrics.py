"""HCI-style disparity metrics: BadPix(eps) and MSE x 100."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .lf_io import DisparityMap, write_png

DEFAULT_THRESHOLDS = (0.07, 0.03, 0.01)
ERROR_RED = (1.0, 0.0, 0.0)


class EmptyMask(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS
    border_margin: int = 0
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if any(not eps > 0 for eps in self.thresholds):
            raise ValueError("thresholds must be positive")
        if self.border_margin < 0:
            raise ValueError("border margin must be nonnegative")

    def evaluation_mask(self, pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
        h, w = gt.shape
        m = self.border_margin
        if m and 2 * m >= min(h, w):
            raise ValueError(f"border margin {m} too large for {h}x{w} maps")
        mask = pred.valid() & gt.valid()
        if self.mask is not None:
            extra = np.asarray(self.mask, dtype=bool)
            if extra.shape != gt.shape:
                raise ValueError("metric mask shape does not match the maps")
            mask = mask & extra
        if m:
            border = np.zeros_like(mask)
            border[m : h - m, m : w - m] = True
            mask = mask & border
        if not mask.any():
            raise EmptyMask("no pixels left to evaluate")
        return mask


def _abs_error(pred: DisparityMap, gt: DisparityMap) -> np.ndarray:
    return np.abs(pred.values - gt.values)


def badpix(pred: DisparityMap, gt: DisparityMap, epsilon: float, config: MetricConfig = MetricConfig()) -> float:
    """Percentage of evaluated pixels with ``|pred - gt| > epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mask = config.evaluation_mask(pred, gt)
    bad = (_abs_error(pred, gt) > epsilon) & mask
    return 100.0 * int(bad.sum()) / int(mask.sum())


def mse100(pred: DisparityMap, gt: DisparityMap, config: MetricConfig = MetricConfig()) -> float:
    mask = config.evaluation_mask(pred, gt)
    diff = (pred.values - gt.values)[mask]
    return 100.0 * float(np.mean(diff**2))


def report(pred: DisparityMap, gt: DisparityMap, config: MetricConfig = MetricConfig()) -> Dict[str, float]:
    """BadPix at every configured threshold plus MSE x 100, keyed for JSON."""
    out = {f"badpix_{eps:g}": badpix(pred, gt, eps, config) for eps in config.thresholds}
    out["mse100"] = mse100(pred, gt, config)
    return out


def error_map(pred: DisparityMap, gt: DisparityMap, epsilon: float) -> np.ndarray:
    """Boolean map of pixels whose error exceeds ``epsilon``."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    valid = pred.valid() & gt.valid()
    return (_abs_error(pred, gt) > epsilon) & valid


def gray_disparity(values: np.ndarray, value_range: Tuple[float, float]) -> np.ndarray:
    """Linear gray ramp: ``value_range[0]`` -> black, ``value_range[1]`` -> white."""
    lo, hi = value_range
    if hi <= lo:
        return np.zeros_like(values, dtype=np.float64)
    return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def error_map_image(
    pred: DisparityMap, flags: np.ndarray, value_range: Tuple[float, float]
) -> np.ndarray:
    gray = gray_disparity(pred.values, value_range)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    rgb[flags] = ERROR_RED
    return rgb


def write_error_map(path, pred: DisparityMap, gt: DisparityMap, epsilon: float, value_range=None) -> np.ndarray:
    flags = error_map(pred, gt, epsilon)
    if value_range is None:
        finite = gt.values[gt.valid()]
        value_range = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    write_png(path, error_map_image(pred, flags, value_range))
    return flags
