import json

import numpy as np
import pytest

from oracles import central_difference, js_bits_mp, kl_bits_mp, max_relative_error
from subfocal.costvol import CostVolume, DisparityGrid
from subfocal.distrib import DisparityDistribution, js_divergence, softmax_neg, target_distribution
from subfocal.lf_io import DisparityMap
from subfocal.loss import (
    LossConfig,
    LossKind,
    compute_loss,
    dist_loss,
    l1_loss,
    loss_backward,
    mse_loss,
    uafl,
)

GRID5 = DisparityGrid(-1, 1, 0.5)


def fixture(seed, shape=(4, 4), grid=GRID5):
    rng = np.random.default_rng(seed)
    costs = rng.normal(scale=1.5, size=(grid.size,) + shape)
    gt = rng.uniform(grid.d_min, grid.d_max, size=shape)
    return CostVolume(costs, grid), DisparityMap(gt)


def frozen_u_loss(cv, gt, beta):
    """UAFL with U evaluated once at the base costs and then held fixed."""
    target, mask = target_distribution(gt, cv.grid)
    w = js_divergence(target, softmax_neg(cv.costs), axis=0) ** beta

    def f(costs):
        d_hat = np.tensordot(cv.grid.samples, softmax_neg(costs), axes=(0, 0))
        return float(np.mean((w * np.abs(gt.values - d_hat))[mask]))

    return f


CONFIGS = [
    LossConfig(LossKind.L1),
    LossConfig(LossKind.MSE),
    LossConfig(LossKind.KL),
    LossConfig(LossKind.JS),
    LossConfig(LossKind.UAFL, beta=0.1, stop_gradient_through_U=False),
    LossConfig(LossKind.UAFL, beta=1.0, stop_gradient_through_U=False),
    LossConfig.sum_of(LossConfig(LossKind.L1), LossConfig(LossKind.JS)),
]


@pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"{c.label()}-b{c.beta}")
@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(config, seed):
    cv, gt = fixture(seed)
    analytic = loss_backward(cv, gt, config)

    def f(c):
        return compute_loss(CostVolume(c, cv.grid), gt, config).scalar

    assert max_relative_error(analytic, central_difference(f, cv.costs)) < 1e-4


@pytest.mark.parametrize("beta", [0.1, 0.5])
def test_stop_gradient_matches_frozen_weight(beta):
    cv, gt = fixture(3)
    config = LossConfig(LossKind.UAFL, beta=beta, stop_gradient_through_U=True)
    analytic = loss_backward(cv, gt, config)
    numeric = central_difference(frozen_u_loss(cv, gt, beta), cv.costs)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_stop_gradient_modes_differ():
    cv, gt = fixture(4)
    a = loss_backward(cv, gt, LossConfig(LossKind.UAFL, stop_gradient_through_U=True))
    b = loss_backward(cv, gt, LossConfig(LossKind.UAFL, stop_gradient_through_U=False))
    assert not np.allclose(a, b)


class TestUafl:
    @pytest.mark.parametrize("seed", range(10))
    def test_beta_zero_is_l1_bitwise(self, seed):
        cv, gt = fixture(seed)
        dist = DisparityDistribution(softmax_neg(cv.costs), cv.grid)
        pred = DisparityMap(np.tensordot(cv.grid.samples, dist.probs, axes=(0, 0)))
        a = uafl(dist, gt, 0.0).per_pixel
        b = l1_loss(pred, gt).per_pixel
        assert a.tobytes() == b.tobytes()

    def test_exact_prediction_is_zero(self):
        gt = DisparityMap(np.array([[0.25, -0.8]]))
        target, _ = target_distribution(gt, GRID5)
        assert uafl(DisparityDistribution(target, GRID5), gt, 0.1).scalar == 0.0

    @pytest.mark.parametrize("beta", [0.1, 0.5, 2.0])
    def test_single_pixel_closed_form(self, beta):
        grid = DisparityGrid(0, 1, 0.5)
        probs = np.array([0.2, 0.5, 0.3])
        rep = uafl(DisparityDistribution(probs[:, None, None], grid), DisparityMap(np.array([[0.5]])), beta)
        u = js_bits_mp(probs, [0, 1, 0])
        assert rep.scalar == pytest.approx(u**beta * 0.05, rel=1e-12)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(LossKind.UAFL, beta=-0.1)


class TestPointLosses:
    def test_zero(self):
        m = DisparityMap(np.ones((3, 3)))
        assert l1_loss(m, m).scalar == 0.0 and mse_loss(m, m).scalar == 0.0

    def test_constant_offset(self):
        gt = DisparityMap(np.zeros((5, 5)))
        pred = DisparityMap(np.full((5, 5), 0.1))
        assert l1_loss(pred, gt).scalar == pytest.approx(0.1, abs=1e-15)
        assert mse_loss(pred, gt).scalar == pytest.approx(0.01, abs=1e-15)

    def test_random_vs_direct(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(6, 7)), rng.normal(size=(6, 7))
        assert l1_loss(DisparityMap(a), DisparityMap(b)).scalar == pytest.approx(np.abs(a - b).mean(), rel=1e-14)
        assert mse_loss(DisparityMap(a), DisparityMap(b)).scalar == pytest.approx(((a - b) ** 2).mean(), rel=1e-14)

    def test_masked_mean(self):
        gt = DisparityMap(np.array([[0.0, np.nan]]), mask=np.array([[True, False]]))
        pred = DisparityMap(np.array([[0.5, 3.0]]))
        rep = l1_loss(pred, gt)
        assert rep.scalar == 0.5 and rep.mask_used.tolist() == [[True, False]]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_loss(DisparityMap(np.zeros((2, 2))), DisparityMap(np.zeros((2, 3))))

    def test_l1_kink_subgradient_zero(self):
        costs = np.random.default_rng(8).normal(size=(5, 1, 1))
        d_hat = np.tensordot(GRID5.samples, softmax_neg(costs), axes=(0, 0))
        g = loss_backward(CostVolume(costs, GRID5), DisparityMap(d_hat), LossConfig(LossKind.L1))
        assert not g.any()


class TestDistLoss:
    def test_exact_target_zero(self):
        gt = DisparityMap(np.array([[0.3]]))
        target, _ = target_distribution(gt, GRID5)
        for kind in (LossKind.KL, LossKind.JS):
            assert dist_loss(DisparityDistribution(target, GRID5), gt, kind).scalar == 0.0

    def test_uniform_vs_grid_point(self):
        uniform = np.full(5, 0.2)
        one_hot = np.array([0, 0, 1.0, 0, 0])
        dist = DisparityDistribution(uniform[:, None, None], GRID5)
        gt = DisparityMap(np.zeros((1, 1)))
        assert dist_loss(dist, gt, "js").scalar == pytest.approx(js_bits_mp(one_hot, uniform), abs=1e-14)
        assert dist_loss(dist, gt, "kl").scalar == pytest.approx(kl_bits_mp(one_hot, uniform), abs=1e-14)
        assert dist_loss(dist, gt, "kl").scalar == pytest.approx(np.log2(5), abs=1e-14)

    def test_sum_is_additive(self):
        cv, gt = fixture(5)
        parts = [LossConfig(LossKind.L1), LossConfig(LossKind.KL), LossConfig(LossKind.UAFL)]
        total = compute_loss(cv, gt, LossConfig.sum_of(*parts)).scalar
        assert total == pytest.approx(sum(compute_loss(cv, gt, p).scalar for p in parts), rel=1e-13)

    def test_js_stationary_at_optimum(self):
        gt = DisparityMap(np.array([[0.0, 0.5], [-0.5, 1.0]]))
        target, _ = target_distribution(gt, GRID5)
        # one-hot targets are reachable as a limit; use large finite cost gaps
        costs = np.where(target > 0, 0.0, 60.0)
        g = loss_backward(CostVolume(costs, GRID5), gt, LossConfig(LossKind.JS))
        assert np.linalg.norm(g) < 1e-8


def test_report_json_line():
    cv, gt = fixture(6)
    line = compute_loss(cv, gt, LossConfig(LossKind.UAFL)).to_json(3, "uafl", 0.1)
    rec = json.loads(line)
    assert set(rec) == {"step", "kind", "scalar", "beta"} and rec["step"] == 3


def test_backward_deterministic():
    cv, gt = fixture(7)
    cfg = LossConfig(LossKind.UAFL, stop_gradient_through_U=False)
    assert loss_backward(cv, gt, cfg).tobytes() == loss_backward(cv, gt, cfg).tobytes()
