import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evhands.hand import generate_toy_assets, mirror_assets  # noqa: E402

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def right_assets():
    return generate_toy_assets(0, "right")


@pytest.fixture(scope="session")
def left_assets(right_assets):
    return mirror_assets(right_assets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


TINY_OVERRIDES = {"data": {"duration_s": 1.0, "keep_every": 20, "resample_m": 128},
                  "net": {"feat_dim": 64}, "train": {"iterations": 20, "batch_size": 4, "checkpoint_every": 0}}


@pytest.fixture(scope="session")
def tiny_config():
    from evhands.config import load_config
    return load_config(None, TINY_OVERRIDES)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_config, left_assets, right_assets):
    """One simulated second of each default script, every 20th window kept."""
    from evhands.dataset import build_dataset, load_dataset
    root = tmp_path_factory.mktemp("tiny") / "data"
    build_dataset(tiny_config, root, left_assets, right_assets)
    return load_dataset(root)
