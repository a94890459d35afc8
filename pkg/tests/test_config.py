import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackfusion.config import ConfigError, TrainConfig, toy_config
from trackfusion.rng import Stream, init_tensor


def test_defaults():
    c = TrainConfig()
    assert (c.latent_dim, c.global_latent_dim, c.batch_size, c.intermediate_dim, c.eps_scale) == (64, 128, 32, 128, 0.01)
    assert c.shape == (5, 4, 16, 24) and c.strategy == "vrae" and c.refine_granularity == "note"


def test_text_roundtrip():
    c = toy_config(eps_scale=0.003, shared_bvae=True, strategy="projection")
    assert TrainConfig.from_text(c.to_text()) == c


def test_overrides_and_errors():
    c = TrainConfig().with_overrides({"tracks": "2", "learning_rate": "0.01"})
    assert c.tracks == 2 and len(c.track_names) == 2 and c.learning_rate == 0.01
    with pytest.raises(ConfigError):
        TrainConfig().with_overrides({"colour": "red"})
    with pytest.raises(ConfigError):
        TrainConfig(latent_dim=0)
    with pytest.raises(ConfigError):
        TrainConfig(strategy="attention")
    with pytest.raises(ConfigError):
        TrainConfig(pitch_lo=120)
    with pytest.raises(ConfigError):
        TrainConfig().with_overrides({"batch_size": "many"})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), name=st.text(max_size=8))
def test_streams_are_reproducible_and_named(seed, name):
    a, b = Stream(seed, name), Stream(seed, name)
    assert a.normal((5,)).tobytes() == b.normal((5,)).tobytes()
    assert not np.array_equal(Stream(seed, name + "x").uniform((4,)), Stream(seed, name).uniform((4,)))


def test_normal_statistics_and_init_range():
    z = Stream(0, "n").normal((200_000,))
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.02
    w = init_tensor(0, "w", (50, 50))
    assert w.min() >= -0.08 and w.max() <= 0.08
    assert init_tensor(0, "w", (3,)).tobytes() == init_tensor(0, "w", (3,)).tobytes()
