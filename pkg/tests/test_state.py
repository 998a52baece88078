import numpy as np
import pytest

from ecvlroute.features import Normalizer
from ecvlroute.nn.model import MfConfig, MlpConfig, RouterModel, TransformerConfig
from ecvlroute.nn.state import (
    FORMAT_VERSION,
    RouterState,
    StateError,
    load_state,
    save_state,
)
from ecvlroute.nn.train import EpochStats
from ecvlroute.rsd import scenario_preset


def make_state(cfg=None, tau=0.65, with_norm=True):
    cfg = cfg or TransformerConfig(layers=1, d=8, heads=2, ffn=12, dropout=0.1)
    model = RouterModel(cfg, 5, 6, seed=4)
    norm = Normalizer(mean=np.arange(7, dtype=np.float64),
                      std=np.ones(7) * 2.0) if with_norm else None
    return RouterState(
        model=model, tau=tau, scenario=scenario_preset("rcs2", mes=7.0),
        history=[EpochStats(0, 0.5, 0.6, 0.61), EpochStats(1, 0.4, 0.65, 0.63)],
        normalizer=norm, mask=(1, 0, 1),
    )


@pytest.mark.parametrize("cfg", [
    TransformerConfig(layers=1, d=8, heads=2, ffn=12, dropout=0.1),
    MlpConfig(d=6, hidden=(8, 4)),
    MfConfig(rank=3, inner=5),
])
def test_round_trip_bit_exact(tmp_path, cfg):
    state = make_state(cfg)
    path = tmp_path / "router.bin"
    save_state(state, path)
    loaded = load_state(path)
    assert set(loaded.model.params) == set(state.model.params)
    for k in state.model.params:
        np.testing.assert_array_equal(loaded.model.params[k],
                                      state.model.params[k])
    assert loaded.tau == state.tau
    assert loaded.scenario == state.scenario
    assert loaded.mask == state.mask
    assert loaded.format_version == FORMAT_VERSION
    assert loaded.model.config == state.model.config
    assert (loaded.model.k_text, loaded.model.k_image) == (5, 6)


def test_round_trip_predictions_identical(tmp_path):
    from tests.test_model import random_bundles
    state = make_state(MlpConfig(d=6, hidden=(8,)))
    path = tmp_path / "r.bin"
    save_state(state, path)
    bundles = random_bundles(10, 5, 6)
    np.testing.assert_array_equal(state.model.predict_proba(bundles),
                                  load_state(path).model.predict_proba(bundles))


def test_normalizer_and_history_round_trip(tmp_path):
    state = make_state()
    path = tmp_path / "r.bin"
    save_state(state, path)
    loaded = load_state(path)
    np.testing.assert_array_equal(loaded.normalizer.mean, state.normalizer.mean)
    np.testing.assert_array_equal(loaded.normalizer.std, state.normalizer.std)
    assert len(loaded.history) == 2
    assert loaded.history[0]["tau_star"] == 0.6


def test_no_normalizer(tmp_path):
    state = make_state(with_norm=False)
    path = tmp_path / "r.bin"
    save_state(state, path)
    assert load_state(path).normalizer is None


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(StateError, match="bad magic"):
        load_state(path)


def test_corruption_detected(tmp_path):
    state = make_state()
    path = tmp_path / "r.bin"
    save_state(state, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(StateError, match="checksum mismatch"):
        load_state(path)


def test_truncation_detected(tmp_path):
    state = make_state()
    path = tmp_path / "r.bin"
    save_state(state, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 20])
    with pytest.raises(StateError, match="checksum mismatch"):
        load_state(path)


def test_unsupported_version(tmp_path):
    state = make_state()
    path = tmp_path / "r.bin"
    save_state(state, path)
    data = bytearray(path.read_bytes())
    data[8] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(StateError, match="version"):
        load_state(path)


def test_tau_bounds():
    with pytest.raises(StateError, match="tau"):
        make_state(tau=1.5)
