import numpy as np
import pytest

from oracles import box_filter_bruteforce, central_difference, max_relative_error, naive_conv3d_relu_project
from subfocal.costvol import (
    AggregatorParams,
    CostKind,
    CostVolume,
    DisparityGrid,
    InvalidGrid,
    aggregate_box,
    aggregate_learned,
    aggregate_learned_backward,
    build_cost_volume,
    dump_cost_volume,
    load_cost_volume,
    load_params,
    save_params,
)
from subfocal.lf_io import LightField
from subfocal.synth import SceneKind, SceneSpec, render


def random_cv(shape=(3, 4, 4), seed=0, grid=None):
    rng = np.random.default_rng(seed)
    grid = grid or DisparityGrid(0.0, 0.5 * (shape[0] - 1), 0.5)
    return CostVolume(rng.normal(size=shape), grid)


def random_params(seed=1, n_filters=2, kernel=(3, 3, 3)):
    rng = np.random.default_rng(seed)
    return AggregatorParams(
        rng.normal(scale=0.5, size=(n_filters,) + kernel),
        rng.normal(scale=0.2, size=n_filters),
        rng.normal(size=n_filters),
    )


class TestGrid:
    def test_hci_default_has_17_levels(self):
        g = DisparityGrid()
        assert g.size == 17
        assert g.samples[0] == -4.0 and g.samples[-1] == 4.0

    @pytest.mark.parametrize("interval,size", [(1, 9), (0.5, 17), (0.25, 33), (0.1, 81)])
    def test_sizes(self, interval, size):
        assert DisparityGrid(-4, 4, interval).size == size

    @pytest.mark.parametrize("args", [(1, 1, 0.5), (2, 1, 0.5), (0, 1, 0), (0, 1, 0.3), (0, float("inf"), 1)])
    def test_invalid(self, args):
        with pytest.raises(InvalidGrid):
            DisparityGrid(*args)

    def test_parse(self):
        assert DisparityGrid.parse("-2:2", 0.25) == DisparityGrid(-2, 2, 0.25)
        with pytest.raises(InvalidGrid):
            DisparityGrid.parse("-2..2", 0.25)


class TestBuild:
    @pytest.mark.parametrize("cost", list(CostKind))
    def test_argmin_recovers_on_grid_disparity(self, cost):
        d_star = 1.0
        lf, _ = render(SceneSpec(SceneKind.CONSTANT_PLANE, (d_star,), "noise", 3, (5, 5), (40, 40)))
        grid = DisparityGrid(-2, 2, 0.5)
        cv = build_cost_volume(lf, grid, cost=cost)
        best = grid.samples[np.argmin(cv.costs, axis=0)]
        m = 2 * 2 * int(np.ceil(abs(d_star)))
        interior = best[m:-m, m:-m]
        assert np.mean(interior == d_star) > 0.99

    @pytest.mark.parametrize("cost", list(CostKind))
    def test_identical_views_zero_slice(self, cost):
        img = np.random.default_rng(0).uniform(size=(6, 6))
        lf = LightField(np.broadcast_to(img, (3, 3, 6, 6)).copy())
        cv = build_cost_volume(lf, DisparityGrid(-1, 1, 0.5), cost=cost)
        k0 = int(np.flatnonzero(cv.grid.samples == 0.0)[0])
        assert np.all(cv.costs[k0] == 0.0)

    def test_variance_matches_direct_population_variance(self):
        lf = LightField(np.random.default_rng(1).uniform(size=(3, 3, 8, 8)))
        cv = build_cost_volume(lf, DisparityGrid(0, 1, 1))
        # at d=0 every view is valid, so this is a plain variance across views
        np.testing.assert_allclose(cv.costs[0], lf.views.reshape(9, 8, 8).var(axis=0), atol=1e-15)
        assert np.all(cv.coverage[0] == 9)

    def test_low_coverage_gets_slice_maximum(self):
        lf = LightField(np.random.default_rng(2).uniform(size=(1, 3, 5, 5)))
        cv = build_cost_volume(lf, DisparityGrid(0, 4, 4))
        low = cv.coverage[1] < 2
        assert low.any()
        assert np.all(cv.costs[1][low] == cv.costs[1][~low].max())

    def test_threads_do_not_change_result(self, monkeypatch):
        lf, _ = render(SceneSpec(SceneKind.CONSTANT_PLANE, (0.3,), "noise", 0, (3, 3), (16, 16)))
        grid = DisparityGrid(-1, 1, 0.25)
        monkeypatch.setenv("SUBFOCAL_THREADS", "1")
        a = build_cost_volume(lf, grid)
        monkeypatch.setenv("SUBFOCAL_THREADS", "4")
        b = build_cost_volume(lf, grid)
        assert a.costs.tobytes() == b.costs.tobytes()

    def test_dump_round_trip(self, tmp_path):
        cv = random_cv()
        dump_cost_volume(cv, tmp_path / "cv.bin")
        back = load_cost_volume(tmp_path / "cv.bin")
        assert back.grid == cv.grid
        np.testing.assert_array_equal(back.costs, cv.costs.astype(np.float32))


class TestBox:
    def test_radius_zero_identity(self):
        cv = random_cv()
        np.testing.assert_array_equal(aggregate_box(cv, 0).costs, cv.costs)

    def test_constant_slice_unchanged(self):
        cv = CostVolume(np.full((3, 5, 5), 0.25), DisparityGrid(0, 1, 0.5))
        np.testing.assert_allclose(aggregate_box(cv, 2).costs, 0.25, rtol=0, atol=1e-16)

    def test_impulse_plateau(self):
        costs = np.zeros((1, 7, 7))
        costs[0, 3, 3] = 1.0
        cv = CostVolume(np.repeat(costs, 2, axis=0), DisparityGrid(0, 0.5, 0.5))
        out = aggregate_box(cv, 1).costs[0]
        np.testing.assert_allclose(out[2:5, 2:5], 1 / 9, atol=1e-15)
        out[2:5, 2:5] = 0
        np.testing.assert_allclose(out, 0, atol=1e-15)

    @pytest.mark.parametrize("radius", [1, 2, 3])
    def test_matches_bruteforce(self, radius):
        cv = random_cv((2, 6, 9), seed=radius)
        out = aggregate_box(cv, radius).costs
        for k in range(2):
            np.testing.assert_allclose(out[k], box_filter_bruteforce(cv.costs[k], radius), atol=1e-12)


class TestLearned:
    def test_identity_passthrough(self):
        cv = random_cv()
        out = aggregate_learned(cv, AggregatorParams.identity(3))
        np.testing.assert_array_equal(out.costs, np.maximum(cv.costs, 0))
        pos = CostVolume(np.abs(cv.costs), cv.grid)
        np.testing.assert_array_equal(aggregate_learned(pos, AggregatorParams.identity()).costs, pos.costs)

    @pytest.mark.parametrize("b", [0.7, -0.3])
    def test_zero_filters_constant(self, b):
        n = 3
        params = AggregatorParams(np.zeros((n, 3, 3, 3)), np.full(n, b), np.ones(n))
        out = aggregate_learned(random_cv(), params).costs
        np.testing.assert_array_equal(out, max(b, 0.0) * n)

    @pytest.mark.parametrize("kernel", [(3, 3, 3), (1, 3, 5)])
    def test_matches_naive_loop(self, kernel):
        cv = random_cv((3, 4, 4), seed=3)
        p = random_params(4, 2, kernel)
        out = aggregate_learned(cv, p).costs
        ref = naive_conv3d_relu_project(cv.costs, p.filters, p.biases, p.projection)
        np.testing.assert_array_equal(out, ref)

    def test_rejects_non_finite_params(self):
        p = AggregatorParams.identity()
        p.biases[0] = np.nan
        with pytest.raises(ValueError):
            aggregate_learned(random_cv(), p)

    def test_params_file_round_trip(self, tmp_path):
        p = random_params()
        save_params(p, tmp_path / "p.bin")
        q = load_params(tmp_path / "p.bin")
        assert q.kernel == p.kernel
        np.testing.assert_array_equal(q.flat(), p.flat())


class TestLearnedBackward:
    def _setup(self):
        cv = random_cv((3, 4, 4), seed=5)
        p = random_params(6, 2)
        g = np.random.default_rng(7).normal(size=cv.shape)
        return cv, p, g

    def test_input_gradient_vs_fd(self):
        cv, p, g = self._setup()
        g_x, _ = aggregate_learned_backward(cv, p, g)

        def f(x):
            return float(np.sum(g * aggregate_learned(CostVolume(x, cv.grid), p).costs))

        assert max_relative_error(g_x, central_difference(f, cv.costs)) < 1e-4

    def test_param_gradient_vs_fd(self):
        cv, p, g = self._setup()
        _, g_p = aggregate_learned_backward(cv, p, g)

        def f(flat):
            q = AggregatorParams.from_flat(flat, p.n_filters, p.kernel)
            return float(np.sum(g * aggregate_learned(cv, q).costs))

        assert max_relative_error(g_p.flat(), central_difference(f, p.flat())) < 1e-4

    def test_zero_upstream(self):
        cv, p, _ = self._setup()
        g_x, g_p = aggregate_learned_backward(cv, p, np.zeros(cv.shape))
        assert not g_x.any() and not g_p.flat().any()

    def test_identity_gradient_is_masked_upstream(self):
        cv, _, g = self._setup()
        g_x, _ = aggregate_learned_backward(cv, AggregatorParams.identity(), g)
        np.testing.assert_array_equal(g_x, g * (cv.costs > 0))

    def test_shape_mismatch(self):
        cv, p, _ = self._setup()
        with pytest.raises(ValueError):
            aggregate_learned_backward(cv, p, np.zeros((1, 2, 3)))
