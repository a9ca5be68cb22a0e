import numpy as np
import pytest
import torch

from ldnet.dataset import Rating, Sample, make_dataset
from ldnet.features import Spectrogram
from ldnet.model import ModelConfig, build_model


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


def tiny_dataset(n_systems=3, per_system=4, listeners=("a", "b", "c"), seed=0):
    """Every sample rated by every listener; first two samples per system are valid/test."""
    rng = np.random.default_rng(seed)
    samples, ratings = [], []
    for s in range(n_systems):
        for k in range(per_system):
            sid = f"s{s}_u{k}"
            split = "valid" if k == 0 else "test" if k == 1 else "train"
            samples.append(Sample(sid, f"s{s}", f"{sid}.wav", split))
            for lid in listeners:
                ratings.append(Rating(sid, lid, float(rng.integers(1, 6))))
    return make_dataset(samples, ratings)


def random_spectrogram(rng, n_frames, n_bins=257):
    return Spectrogram(rng.random((n_frames, n_bins), dtype=np.float32), 62.5)


def small_model(family="ldnet", encoder="mobilenet_v3", decoder="ffn", listeners=5, seed=0, **kw):
    extra = 1 if family == "ldnet_ml" else 0
    lc = 0 if family == "mosnet" else listeners + extra
    return build_model(ModelConfig(family=family, encoder=encoder, decoder=decoder, listener_count=lc, **kw), seed)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool | None, detail: str):
    """``passed=None`` marks a criterion that was skipped."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"AC{number} {status}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
