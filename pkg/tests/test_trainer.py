import numpy as np
import pytest

from subfocal.costvol import AggregatorParams, CostVolume, DisparityGrid, aggregate_learned
from subfocal.loss import LossKind
from subfocal.trainer import (
    TrainConfig,
    TrainingDiverged,
    _batch_step,
    init_params,
    prepare,
    render_dataset,
    synthetic_dataset,
    train,
)


@pytest.fixture(scope="module")
def data():
    train_specs, held_spec = synthetic_dataset(0, n_train=2, spatial_dims=(24, 24))
    return render_dataset(train_specs), render_dataset([held_spec])[0]


class TestInit:
    def test_same_seed_identical(self):
        assert init_params(3).flat().tobytes() == init_params(3).flat().tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(init_params(3).flat(), init_params(4).flat())

    def test_zero_scale_is_identity(self):
        p = init_params(5, scale=0.0)
        x = np.abs(np.random.default_rng(0).normal(size=(3, 4, 4)))
        cv = CostVolume(x, DisparityGrid(0, 1, 0.5))
        np.testing.assert_array_equal(aggregate_learned(cv, p).costs, x)
        np.testing.assert_array_equal(p.filters, AggregatorParams.identity(4).filters)
        assert p.projection.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_zero_epochs_noop(data):
    scenes, _ = data
    cfg = TrainConfig(stage1_epochs=0, stage2_epochs=0, seed=2)
    params, trace = train(cfg, scenes)
    assert len(trace) == 0
    np.testing.assert_array_equal(params.flat(), init_params(2).flat())


def test_stage1_reduces_l1(data):
    scenes, held = data
    params, trace = train(TrainConfig(stage1_epochs=30, stage2_epochs=0), scenes[:1], held)
    losses = [r.loss for r in trace.records]
    assert len(losses) == 30
    end, _ = _batch_step([prepare(scenes[0], TrainConfig())], params, TrainConfig().stage_loss(1))
    assert end < losses[0]


def test_deterministic(data):
    scenes, held = data
    cfg = TrainConfig(stage1_epochs=3, stage2_epochs=2)
    p1, t1 = train(cfg, scenes, held)
    p2, t2 = train(cfg, scenes, held)
    assert p1.flat().tobytes() == p2.flat().tobytes()
    assert t1.jsonl() == t2.jsonl()


def test_trace_records_stages(data):
    scenes, held = data
    _, trace = train(TrainConfig(stage1_epochs=2, stage2_epochs=3), scenes, held)
    assert [r.stage for r in trace.records] == [1, 1, 2, 2, 2]
    assert trace.kinds == ["l1"] * 2 + ["uafl"] * 3
    assert all(r.badpix_007 is not None for r in trace.records)


def test_beta_zero_stage2_matches_l1(data):
    scenes, _ = data
    base = dict(stage1_epochs=0, stage2_epochs=3, lr2=3e-3)
    p_uafl, _ = train(TrainConfig(**base, beta=0.0), scenes)
    p_l1, _ = train(TrainConfig(**base, stage2_loss=LossKind.L1), scenes)
    assert p_uafl.flat().tobytes() == p_l1.flat().tobytes()


def test_divergence_raises(data):
    scenes, _ = data
    with pytest.raises(TrainingDiverged) as err:
        train(TrainConfig(stage1_epochs=5, stage2_epochs=0, lr1=1e308), scenes)
    assert err.value.stage == 1


def test_invalid_config():
    with pytest.raises(ValueError):
        TrainConfig(lr1=0)
    with pytest.raises(ValueError):
        TrainConfig(stage1_epochs=-1)
