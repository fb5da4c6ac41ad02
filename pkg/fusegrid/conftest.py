"""
Shared pytest setup: put the service directory on sys.path (modules import each
other by bare name) and gate slow experiments behind --runslow.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

SERVICE_DIR = Path(__file__).resolve().parent
if str(SERVICE_DIR) not in sys.path:
    sys.path.insert(0, str(SERVICE_DIR))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_base():
    """Two conv layers on 8^3 inputs: fast enough for training loops in tests."""
    from model import BaseConfig

    return BaseConfig(num_layers=2, channels=(4, 4), input_side=8, pool_after=(1,), fc_hidden=8)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for name in ("FUSEGRID_SEED", "FUSEGRID_DEBUG", "FUSEGRID_LOG_LEVEL", "FUSEGRID_JOBS", "FUSEGRID_OUT_DIR", "FUSEGRID_WRITE_MANIFEST"):
        monkeypatch.delenv(name, raising=False)


def make_toy_samples(n=16, side=8, seed=0):
    """Abnormal cases carry a brighter image and a larger mask."""
    from preprocess import Volume, VolumeKind
    from train import Sample

    gen = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        z = i % 2
        image = gen.normal(0.7 if z else 0.3, 0.05, size=(side,) * 3)
        mask = np.zeros((side,) * 3, dtype=np.float32)
        half = side // 2
        width = half - 1 if z else half // 2
        mask[half - width:half + width, half - width:half + width, half - width:half + width] = 1
        samples.append(Sample(f"toy{i:02d}", Volume(image), Volume(mask, kind=VolumeKind.MASK), z))
    return samples


@pytest.fixture
def toy_samples():
    return make_toy_samples()
