import numpy as np
import pytest

from utmos.backends import CallableBackend, FrameFeatures, ToyBackend, backend_extract, get_backend, register_backend
from utmos.errors import ConfigurationError


def test_one_second_frame_count():
    f = backend_extract(np.random.default_rng(0).normal(size=16000))
    assert abs(f.n_frames - 50) <= 1
    assert f.frames.shape[1] == 64


def test_deterministic_and_discriminative():
    rng = np.random.default_rng(1)
    noise = rng.normal(size=16000) * 0.3
    tone = 0.3 * np.sin(2 * np.pi * 440 * np.arange(16000) / 16000)
    b = ToyBackend()
    assert np.array_equal(b.extract(noise).frames, b.extract(noise).frames)
    assert np.linalg.norm(b.extract(noise).frames - b.extract(tone).frames) > 0


def test_registry_ids():
    b = get_backend("toy:dim=48,seed=3")
    assert b.dim == 48 and b.backend_id == "toy:dim=48,seed=3"
    with pytest.raises(ConfigurationError):
        get_backend("wav2vec-nonexistent")
    with pytest.raises(ConfigurationError):
        get_backend("toy:dim")
    with pytest.raises(ConfigurationError):
        get_backend("toy:colour=red")


def test_callable_adapter():
    register_backend("framer", lambda dim=4: CallableBackend(f"framer:dim={dim}", lambda w: w[: (w.size // dim) * dim].reshape(-1, dim), dim))
    f = get_backend("framer:dim=4").extract(np.arange(10.0), "u")
    assert f.frames.shape == (2, 4) and f.backend_id == "framer:dim=4"
    bad = CallableBackend("bad", lambda w: np.zeros((3, 2)), 5)
    with pytest.raises(ConfigurationError):
        bad.extract(np.zeros(10))


def test_frame_features_validation():
    with pytest.raises(ValueError):
        FrameFeatures("u", np.zeros((0, 3)), "x")
    with pytest.raises(ValueError):
        FrameFeatures("u", np.array([[np.nan]]), "x")
