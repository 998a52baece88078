import math

import numpy as np
import pytest

from ecvlroute.nn.model import MfConfig, MlpConfig, TransformerConfig
from ecvlroute.nn.train import TrainConfig, TrainError, one_cycle_lr, train
from ecvlroute.rsd import scenario_preset


class TestOneCycle:
    def test_shape(self):
        total, peak = 100, 1e-3
        lrs = [one_cycle_lr(s, total, peak) for s in range(total)]
        warm = max(1, round(0.3 * total))
        assert lrs[0] == pytest.approx(peak / 25)
        assert lrs[warm] == pytest.approx(peak)
        assert max(lrs) == pytest.approx(peak)
        assert lrs[-1] == pytest.approx(peak / 1e4)
        # warm-up strictly increasing, decay non-increasing
        for a, b in zip(lrs[:warm], lrs[1:warm + 1]):
            assert b > a
        for a, b in zip(lrs[warm:], lrs[warm + 1:]):
            assert b <= a

    def test_single_step(self):
        assert one_cycle_lr(0, 1, 1e-3) == 1e-3

    def test_bounds(self):
        with pytest.raises(ValueError):
            one_cycle_lr(5, 5, 1e-3)
        with pytest.raises(ValueError):
            one_cycle_lr(-1, 5, 1e-3)
        with pytest.raises(ValueError):
            one_cycle_lr(0, 0, 1e-3)

    def test_all_values_positive(self):
        for total in (2, 3, 10, 1000):
            for s in range(total):
                assert one_cycle_lr(s, total, 1e-3) > 0


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(peak_lr=0.0)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.peak_lr) == (50, 64, 1e-3)
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)


def _world_slices(world):
    train_pairs, train_b = world.by_split["train"]
    valid_pairs, valid_b = world.by_split["valid"]
    y = world.split_labels("train")
    return train_b, y, valid_b, valid_pairs


class TestTrainLoop:
    def test_loss_decreases_on_separable_data(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        cfg = TrainConfig(epochs=30, batch_size=32, seed=0)
        state = train(MlpConfig(d=16, hidden=(16, 16)), train_b, y, valid_b,
                      valid_pairs, cfg, scenario_preset("rcs1"), 16, 16)
        losses = [h.loss for h in state.history]
        assert losses[-1] < 0.5 * losses[0]

    def test_deterministic_given_seed(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        cfg = TrainConfig(epochs=3, batch_size=32, seed=4)
        scen = scenario_preset("rcs1")
        a = train(MfConfig(rank=4, inner=8), train_b, y, valid_b, valid_pairs,
                  cfg, scen, 16, 16)
        b = train(MfConfig(rank=4, inner=8), train_b, y, valid_b, valid_pairs,
                  cfg, scen, 16, 16)
        for k in a.model.params:
            np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
        assert a.tau == b.tau
        assert a.history == b.history

    def test_retains_best_epoch_snapshot(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        cfg = TrainConfig(epochs=6, batch_size=32, seed=0)
        scen = scenario_preset("rcs1")
        state = train(MlpConfig(d=8, hidden=(8,)), train_b, y, valid_b,
                      valid_pairs, cfg, scen, 16, 16)
        best = max(h.rcs_star for h in state.history)
        retained = [h for h in state.history if h.rcs_star == best][0]
        assert state.tau == retained.tau_star
        from ecvlroute.evaluation import grid_search_tau
        p = state.model.predict_proba(valid_b)
        tau, rcs = grid_search_tau(p, valid_pairs, scen)
        assert rcs == pytest.approx(best)
        assert tau == retained.tau_star

    def test_transformer_with_dropout_trains(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        cfg = TrainConfig(epochs=4, batch_size=32, seed=0)
        state = train(TransformerConfig(layers=2, d=16, heads=4, ffn=32,
                                        dropout=0.3),
                      train_b, y, valid_b, valid_pairs, cfg,
                      scenario_preset("rcs1"), 16, 16)
        assert len(state.history) == 4
        assert all(math.isfinite(h.loss) for h in state.history)

    def test_empty_train_set(self, small_world):
        _, _, valid_b, valid_pairs = _world_slices(small_world)
        with pytest.raises(TrainError, match="empty"):
            train(MfConfig(), [], [], valid_b, valid_pairs, TrainConfig(),
                  scenario_preset("rcs1"), 16, 16)

    def test_misaligned_labels(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        with pytest.raises(TrainError, match="align"):
            train(MfConfig(), train_b, y[:-1], valid_b, valid_pairs,
                  TrainConfig(epochs=1), scenario_preset("rcs1"), 16, 16)

    def test_history_records_every_epoch(self, small_world):
        train_b, y, valid_b, valid_pairs = _world_slices(small_world)
        cfg = TrainConfig(epochs=5, batch_size=64, seed=1)
        state = train(MfConfig(rank=2, inner=4), train_b, y, valid_b,
                      valid_pairs, cfg, scenario_preset("rcs2"), 16, 16)
        assert [h.epoch for h in state.history] == list(range(5))
        assert all(0.0 <= h.tau_star <= 1.0 for h in state.history)
