import pytest

from gcnenhance.acoustics import SimConfig, generate_dataset
from gcnenhance.synth import write_corpus


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small synthetic speech and noise corpus at 16 kHz."""
    root = tmp_path_factory.mktemp("corpus")
    return write_corpus(root, n_speech=4, n_noise=3, seconds=3.0, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(corpus, tmp_path_factory):
    """Ten simulated two-microphone training examples and four dev examples."""
    speech_dir, noise_dir = corpus
    out = tmp_path_factory.mktemp("data")
    cfg = SimConfig(
        num_examples=10,
        splits=("train",),
        mic_counts=(2,),
        utterance_seconds=1.5,
        seed=3,
    )
    manifests = generate_dataset(cfg, speech_dir, noise_dir, out)
    dev_cfg = SimConfig(num_examples=4, splits=("dev",), mic_counts=(2,), utterance_seconds=1.5, seed=4)
    manifests.update(generate_dataset(dev_cfg, speech_dir, noise_dir, out))
    return manifests


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
