import warnings

import pytest

from utmos.dataset import load_splits, load_waveforms
from utmos.synthetic import make_toy_corpus

warnings.filterwarnings("ignore", category=UserWarning, module="sklearn")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40/15/15 utterances over 5 systems; cheap enough for unit tests."""
    root = tmp_path_factory.mktemp("small_corpus")
    return make_toy_corpus(root, n_train=40, n_dev=15, n_test=15, n_systems=5, n_listeners=8, seed=3)


@pytest.fixture(scope="session")
def small_ds(small_corpus):
    return load_splits(small_corpus.ratings, small_corpus.audio_dir)


@pytest.fixture(scope="session")
def small_waves(small_ds):
    return load_waveforms(small_ds)
