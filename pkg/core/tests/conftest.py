import numpy as np
import pytest

from core.config import ModelConfig, load_config
from core.features import AudioBuffer, SyntheticCorpusSpec, generate_synthetic_corpus

TINY_CONFIG = """\
[data]
prefetch_depth = 0

[model]
num_blocks = 1
model_dim = 16
num_heads = 2
ffn_dim = 32
num_classes = 8
max_rel_dist = 4

[train]
total_steps = 12
batch_size = 4
checkpoint_every = 6
log_every = 6

[train.contrastive]
num_distractors = 3
"""


@pytest.fixture(autouse=True)
def output_root(tmp_path, settings):
    settings.WAVFT_OUTPUT_ROOT = tmp_path / "runs"
    return settings.WAVFT_OUTPUT_ROOT


@pytest.fixture
def gradcheck_model_cfg():
    return ModelConfig(num_blocks=1, model_dim=8, num_heads=2, ffn_dim=16, num_classes=4,
                       max_rel_dist=4, input_dim=16, init_std=0.3)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def tiny_config(tiny_config_file):
    return load_config(tiny_config_file)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticCorpusSpec(num_classes=8, utterances_labelled=8, utterances_unlabelled=16,
                               frames_per_utterance=(6, 10), seed=5)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return generate_synthetic_corpus(small_spec)


def tone(freq_hz, seconds=1.0, sample_rate_hz=16000, amplitude=0.5):
    t = np.arange(int(seconds * sample_rate_hz)) / sample_rate_hz
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate_hz)


@pytest.fixture
def make_tone():
    return tone
