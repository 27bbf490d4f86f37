import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from dggan.config import config_from_dict  # noqa: E402

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def tiny_config_dict(**train):
    """Small networks on 32 px inputs: fast enough for unit tests."""
    t = {"seed": 0, "batch_size": 4, "steps_init_pose": 5, "steps_init_gan": 5, "steps_joint": 5,
         "lr_pose": 1e-3}
    t.update(train)
    return {
        "model": {
            "num_joints": 21,
            "input_size": 32,
            "heatmap_stride": 4,
            "cpm": {"feature_channels": [8, 8], "stage_channels": 8, "num_stages": 2, "layers_per_stage": 3},
            "regressor": {"channels": 8, "layers": 2, "fc": [16, 16]},
            "regularizer": {"channels": [8, 8, 8, 8, 8], "output_size": 32},
            "generator": {"channels": [4, 8], "residual_blocks": 1},
            "discriminator": {"channels": [4, 8]},
        },
        "train": t,
    }


@pytest.fixture
def tiny_config():
    return config_from_dict(tiny_config_dict())


@pytest.fixture(scope="session")
def tiny_samples():
    from dggan.dataio import render_fixtures

    return [r.sample for r in render_fixtures(8, 32, seed=3)]


@pytest.fixture(scope="session")
def fixture_records():
    from dggan.dataio import render_fixtures

    return render_fixtures(6, 64, seed=11)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _no_config_env(monkeypatch):
    monkeypatch.delenv("DGGAN_CONFIG", raising=False)
