"""Disparity and distribution losses with exact gradients w.r.t. raw costs.

All losses reduce by masked mean. The uncertainty-aware focal loss weights
the per-pixel L1 error by ``U ** beta`` where ``U`` is the JS divergence
between the predicted distribution and the two-point target; ``beta = 0``
recovers plain L1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple

import numpy as np

from .costvol import CostVolume, DisparityGrid
from .distrib import (
    DisparityDistribution,
    KL_FLOOR,
    expectation,
    js_divergence,
    kl_divergence,
    softmax_neg,
    target_distribution,
)
from .lf_io import DisparityMap

LN2 = np.log(2.0)


class LossKind(str, Enum):
    L1 = "l1"
    MSE = "mse"
    KL = "kl"
    JS = "js"
    UAFL = "uafl"
    SUM = "sum"


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.UAFL
    beta: float = 0.1
    stop_gradient_through_U: bool = True
    terms: Tuple["LossConfig", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.kind is LossKind.SUM and not self.terms:
            raise ValueError("a summed loss needs at least one term")

    @classmethod
    def sum_of(cls, *terms: "LossConfig") -> "LossConfig":
        return cls(LossKind.SUM, terms=tuple(terms))

    def label(self) -> str:
        if self.kind is LossKind.SUM:
            return "+".join(t.label() for t in self.terms)
        return self.kind.value


@dataclass
class LossReport:
    scalar: float
    per_pixel: np.ndarray
    mask_used: np.ndarray = field(repr=False)

    def to_json(self, step: int, kind: str, beta: float) -> str:
        return json.dumps(
            {"step": step, "kind": kind, "scalar": self.scalar, "beta": beta},
            sort_keys=True,
        )


def _report(per_pixel: np.ndarray, mask: np.ndarray) -> LossReport:
    per_pixel = np.where(mask, per_pixel, 0.0)
    n = int(mask.sum())
    scalar = float(per_pixel[mask].sum() / n) if n else 0.0
    return LossReport(scalar, per_pixel, mask)


def _check_shapes(a, b):
    if a != b:
        raise ValueError(f"shape mismatch: {a} vs {b}")


def l1_loss(pred: DisparityMap, gt: DisparityMap) -> LossReport:
    _check_shapes(pred.shape, gt.shape)
    mask = pred.valid() & gt.valid()
    return _report(np.abs(gt.values - pred.values), mask)


def mse_loss(pred: DisparityMap, gt: DisparityMap) -> LossReport:
    _check_shapes(pred.shape, gt.shape)
    mask = pred.valid() & gt.valid()
    return _report((gt.values - pred.values) ** 2, mask)


def _divergence(kind: LossKind, target: np.ndarray, probs: np.ndarray) -> np.ndarray:
    if kind is LossKind.KL:
        return kl_divergence(target, probs, axis=0)
    return js_divergence(target, probs, axis=0)


def dist_loss(pred_dist: DisparityDistribution, gt: DisparityMap, kind) -> LossReport:
    """Masked mean divergence between the prediction and the two-point target."""
    kind = LossKind(kind)
    if kind not in (LossKind.KL, LossKind.JS):
        raise ValueError(f"not a distribution loss: {kind}")
    _check_shapes(pred_dist.probs.shape[1:], gt.shape)
    target, mask = target_distribution(gt, pred_dist.grid)
    return _report(_divergence(kind, target, pred_dist.probs), mask)


def uafl(pred_dist: DisparityDistribution, gt: DisparityMap, beta: float) -> LossReport:
    """Per-pixel ``U ** beta * |d - d_hat|`` reduced by masked mean."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    _check_shapes(pred_dist.probs.shape[1:], gt.shape)
    target, mask = target_distribution(gt, pred_dist.grid)
    d_hat = expectation(pred_dist.probs, pred_dist.grid.samples)
    u = js_divergence(target, pred_dist.probs, axis=0)
    return _report(u**beta * np.abs(gt.values - d_hat), mask)


class _Forward:
    """Shared forward quantities for losses evaluated from raw costs."""

    def __init__(self, costs: np.ndarray, gt: DisparityMap, grid: DisparityGrid):
        _check_shapes(costs.shape[1:], gt.shape)
        self.samples = grid.samples
        self.probs = softmax_neg(costs)
        self.d_hat = expectation(self.probs, self.samples)
        self.target, self.mask = target_distribution(gt, grid)
        self.gt = np.where(self.mask, gt.values, 0.0)
        self._u = None

    @property
    def u(self) -> np.ndarray:
        if self._u is None:
            self._u = js_divergence(self.target, self.probs, axis=0)
        return self._u

    def js_grad_p(self) -> np.ndarray:
        # dJS(t, p)/dp_k = 0.5 * log2(p_k / m_k)
        p = self.probs
        m = 0.5 * (self.target + p)
        out = np.zeros_like(p)
        pos = p > 0
        out[pos] = 0.5 * np.log2(p[pos] / m[pos])
        return out


def _per_pixel(fw: _Forward, config: LossConfig) -> np.ndarray:
    kind = config.kind
    if kind is LossKind.L1:
        return np.abs(fw.gt - fw.d_hat)
    if kind is LossKind.MSE:
        return (fw.gt - fw.d_hat) ** 2
    if kind in (LossKind.KL, LossKind.JS):
        return _divergence(kind, fw.target, fw.probs)
    if kind is LossKind.UAFL:
        return fw.u**config.beta * np.abs(fw.gt - fw.d_hat)
    total = np.zeros_like(fw.d_hat)
    for term in config.terms:
        total = total + _per_pixel(fw, term)
    return total


def _grad_p(fw: _Forward, config: LossConfig) -> np.ndarray:
    """Per-pixel gradient of the (unreduced) loss w.r.t. the probabilities."""
    kind = config.kind
    if kind is LossKind.SUM:
        total = np.zeros_like(fw.probs)
        for term in config.terms:
            total = total + _grad_p(fw, term)
        return total
    if kind is LossKind.KL:
        p = fw.probs
        out = np.zeros_like(p)
        live = p > KL_FLOOR
        out[live] = -fw.target[live] / (p[live] * LN2)
        return out
    if kind is LossKind.JS:
        return fw.js_grad_p()

    err = fw.d_hat - fw.gt
    if kind is LossKind.L1:
        # subgradient 0 at the kink
        g_dhat = np.sign(err)
    elif kind is LossKind.MSE:
        g_dhat = 2.0 * err
    else:
        u = fw.u
        g_dhat = u**config.beta * np.sign(err)
    g = g_dhat[None] * fw.samples[:, None, None]
    if kind is LossKind.UAFL and not config.stop_gradient_through_U and config.beta > 0:
        u = fw.u
        pos = u > 0
        coeff = np.zeros_like(u)
        coeff[pos] = config.beta * u[pos] ** (config.beta - 1.0) * np.abs(err[pos])
        g = g + coeff[None] * fw.js_grad_p()
    return g


def compute_loss(cv: CostVolume, gt: DisparityMap, config: LossConfig) -> LossReport:
    """Evaluate ``config`` on ``softmax(-costs)`` against ``gt``.

    Ground truth outside the grid (or masked invalid) is excluded.
    """
    fw = _Forward(cv.costs, gt, cv.grid)
    return _report(_per_pixel(fw, config), fw.mask)


def loss_backward(cv: CostVolume, gt: DisparityMap, config: LossConfig) -> np.ndarray:
    """Gradient ``d loss / d costs`` of ``compute_loss``, shape ``[D, H, W]``.

    With ``config.stop_gradient_through_U`` the UAFL weight ``U ** beta`` is
    held constant.
    """
    fw = _Forward(cv.costs, gt, cv.grid)
    n = int(fw.mask.sum())
    if n == 0:
        return np.zeros_like(cv.costs)
    g_p = _grad_p(fw, config)
    p = fw.probs
    # backprop through p = softmax(-c): dL/dc_k = -p_k * (g_k - sum_j p_j g_j)
    mean_g = np.sum(p * g_p, axis=0, keepdims=True)
    g_c = -p * (g_p - mean_g)
    return np.where(fw.mask[None], g_c, 0.0) / n
