import sys

import numpy as np
import pytest

from devgan.config import TrainConfig
from devgan.data import SynthSpec, generate_synthetic
from devgan.networks import ArchSpec

TINY = ArchSpec(image_size=16, base_channels=4, encoder_downsamples=2, translator_resblocks=2, disc_layers=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    return TINY


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    generate_synthetic(SynthSpec(image_size=16, count_a=10, count_b=10, test_count_a=4, test_count_b=4, seed=7), root)
    return root


@pytest.fixture
def tiny_config(tiny_data, tmp_path):
    return TrainConfig(arch=TINY, epochs=1, seed=3, data_root=str(tiny_data), out_dir=str(tmp_path / "run"),
                       audit_every=5)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[key])
