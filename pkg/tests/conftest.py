import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"[ACCEPTANCE] {name}: {verdict}", file=sys.stderr)

from gazeflow.core import Fixation, Scanpath, StimulusImage
from gazeflow.model import ModelConfig, PolicyModel

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.load_profile("default")


TINY_CONFIG = ModelConfig(
    input_w=32,
    input_h=32,
    patch=16,
    embed_dim=32,
    encoder_depth=1,
    decoder_depth=1,
    heads=2,
    path_length=4,
    components=2,
    viewer_tokens=2,
    mode="individual",
)


def random_scanpath(rng: np.random.Generator, n: int, stimulus_id: str = "s", viewer_id=None) -> Scanpath:
    fixes = tuple(
        Fixation(float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), float(rng.uniform(0.05, 1.5)))
        for _ in range(n)
    )
    return Scanpath(stimulus_id, fixes, viewer_id)


def random_image(rng: np.random.Generator, w: int = 48, h: int = 48, stimulus_id: str = "s") -> StimulusImage:
    return StimulusImage(stimulus_id, rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return PolicyModel(TINY_CONFIG)


@pytest.fixture
def stimulus(rng):
    return random_image(rng)
