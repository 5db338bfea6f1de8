import numpy as np
import pytest
import torch

from sac.audio import Waveform
from sac.model import SacModel, SacModelConfig
from sac.synth import make_synthetic_corpus, write_manifest

TINY = dict(
    d_model=32,
    d_code=4,
    k_ac=32,
    k_sem=16,
    d_sem=16,
    base_channels=8,
    decoder_channels=32,
    speaker_hidden=32,
    adapter_blocks=1,
    prenet_blocks=1,
)


def rand_wave(seed: int, seconds: float = 1.0, sample_rate: int = 16000) -> Waveform:
    n = int(round(seconds * sample_rate))
    samples = np.random.default_rng(seed).standard_normal(n).astype(np.float32) * 0.1
    return Waveform(samples, sample_rate)


@pytest.fixture
def make_wave():
    return rand_wave


@pytest.fixture(scope="session")
def tiny_config() -> SacModelConfig:
    return SacModelConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_model(tiny_config) -> SacModel:
    model = SacModel(tiny_config)
    model.eval()
    return model


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Eight short synthetic utterances plus a manifest."""
    root = tmp_path_factory.mktemp("corpus")
    paths = make_synthetic_corpus(root / "wav", n_utterances=8, seed=0)
    manifest = write_manifest(paths, root / "manifest.txt")
    return {"root": root, "paths": paths, "manifest": manifest}
