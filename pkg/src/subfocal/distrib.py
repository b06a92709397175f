"""Disparity distributions: softmax over costs, expectation regression,
two-point discretization of ground truth and divergence-based uncertainty.

Divergences are measured in bits (log base 2), so JS lies in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .costvol import CostVolume, DisparityGrid
from .lf_io import DisparityMap

KL_FLOOR = 1e-12


class OutOfRange(ValueError):
    pass


@dataclass
class DisparityDistribution:
    """Per-pixel probabilities ``[D, H, W]`` over ``grid.samples``."""

    probs: np.ndarray
    grid: DisparityGrid

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3 or self.probs.shape[0] != self.grid.size:
            raise ValueError(
                f"probs shape {self.probs.shape} does not match grid of size {self.grid.size}"
            )


@dataclass
class UncertaintyMap:
    values: np.ndarray
    mask: np.ndarray


def softmax_neg(costs: np.ndarray, axis: int = 0) -> np.ndarray:
    """``softmax(-costs)`` along ``axis`` with max-subtraction."""
    z = -np.asarray(costs, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cost_to_distribution(cv: CostVolume) -> DisparityDistribution:
    if not np.all(np.isfinite(cv.costs)):
        raise ValueError("cost volume contains non-finite values")
    return DisparityDistribution(softmax_neg(cv.costs), cv.grid)


def expectation(probs: np.ndarray, samples: np.ndarray) -> np.ndarray:
    return np.tensordot(samples, probs, axes=(0, 0))


def regress_disparity(dist: DisparityDistribution) -> DisparityMap:
    """Per-pixel expected disparity, clipped to the grid range.

    The clip only absorbs rounding; the expectation is already convex.
    """
    g = dist.grid
    d_hat = np.clip(expectation(dist.probs, g.samples), g.d_min, g.d_max)
    return DisparityMap(d_hat)


def clamp_to_grid(d: np.ndarray, grid: DisparityGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Clamp disparities into the grid range; returns ``(clamped, in_range)``."""
    d = np.asarray(d, dtype=np.float64)
    in_range = (d >= grid.d_min) & (d <= grid.d_max)
    return np.clip(d, grid.d_min, grid.d_max), in_range


def discretize_indices(d, grid: DisparityGrid):
    """Vectorized two-point discretization.

    Returns ``(left_index, p_left, p_right)``; the right neighbour is
    ``left_index + 1``. At the top sample the pair is shifted down one slot
    so the right neighbour stays inside the grid (it then carries all the
    mass).
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d < grid.d_min) or np.any(d > grid.d_max):
        raise OutOfRange(f"disparity outside [{grid.d_min}, {grid.d_max}]")
    samples = grid.samples
    k = np.floor((d - grid.d_min) / grid.interval).astype(np.int64)
    k = np.clip(k, 0, grid.size - 1)
    # guard the floor against rounding on either side of a sample
    k = np.where(samples[k] > d, k - 1, k)
    k = np.where((k + 1 < grid.size) & (samples[np.minimum(k + 1, grid.size - 1)] <= d), k + 1, k)
    k = np.clip(k, 0, grid.size - 1)
    top = k == grid.size - 1
    k = np.where(top, grid.size - 2, k)
    d_l = samples[k]
    d_r = samples[k + 1]
    span = d_r - d_l
    p_l = (d_r - d) / span
    p_r = (d - d_l) / span
    exact_l = d == d_l
    exact_r = d == d_r
    p_l = np.where(exact_l, 1.0, np.where(exact_r, 0.0, p_l))
    p_r = np.where(exact_l, 0.0, np.where(exact_r, 1.0, p_r))
    return k, p_l, p_r


def discretize_gt(d: float, grid: DisparityGrid) -> Tuple[float, float, float, float]:
    """Split a disparity onto its two bracketing samples.

    Returns ``(d_l, p_l, d_r, p_r)`` with ``p_l*d_l + p_r*d_r == d``.
    A disparity sitting on a sample gives that sample probability 1 and its
    right neighbour 0.
    """
    d = float(d)
    if not (grid.d_min <= d <= grid.d_max):
        raise OutOfRange(f"disparity {d} outside [{grid.d_min}, {grid.d_max}]")
    k, p_l, p_r = (np.asarray(a).item() for a in discretize_indices(d, grid))
    samples = grid.samples
    d_l, d_r = float(samples[k]), float(samples[k + 1])
    if d == d_r:
        # top-of-grid sample: report it as the left point
        return d_r, 1.0, d_r + grid.interval, 0.0
    return d_l, float(p_l), d_r, float(p_r)


def target_distribution(gt: DisparityMap, grid: DisparityGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Dense two-point target ``[D, H, W]`` and the mask of usable pixels.

    Usable pixels are valid in ``gt`` and inside the grid range; others are
    clamped before discretization and excluded via the mask.
    """
    valid = gt.valid()
    values = np.where(valid, gt.values, 0.0)
    clamped, in_range = clamp_to_grid(values, grid)
    k, p_l, p_r = discretize_indices(clamped, grid)
    target = np.zeros((grid.size,) + clamped.shape)
    rows, cols = np.indices(clamped.shape)
    target[k, rows, cols] = p_l
    target[k + 1, rows, cols] = p_r
    return target, valid & in_range


def _xlog2(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # p * log2(p / q) with 0 * log 0 := 0
    out = np.zeros(np.broadcast(p, q).shape)
    pos = p > 0
    pb = np.broadcast_to(p, out.shape)
    qb = np.broadcast_to(q, out.shape)
    out[pos] = pb[pos] * np.log2(pb[pos] / qb[pos])
    return out


def js_divergence(p, q, axis: int = -1):
    """Jensen-Shannon divergence in bits along ``axis``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    # symmetric evaluation order keeps JS(p, q) == JS(q, p) bit for bit
    kl_p = _xlog2(p, m).sum(axis=axis)
    kl_q = _xlog2(q, m).sum(axis=axis)
    lo, hi = np.minimum(kl_p, kl_q), np.maximum(kl_p, kl_q)
    js = 0.5 * lo + 0.5 * hi
    return np.clip(js, 0.0, 1.0)


def kl_divergence(p, q, axis: int = -1, floor: float = KL_FLOOR):
    """KL(p || q) in bits with ``q`` floored at ``floor``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return np.maximum(_xlog2(p, np.maximum(q, floor)).sum(axis=axis), 0.0)


def uncertainty_map(pred: DisparityDistribution, gt: DisparityMap) -> UncertaintyMap:
    """Per-pixel JS between the two-point target and the prediction."""
    if pred.probs.shape[1:] != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    target, mask = target_distribution(gt, pred.grid)
    u = js_divergence(target, pred.probs, axis=0)
    return UncertaintyMap(np.where(mask, u, 0.0), mask)
