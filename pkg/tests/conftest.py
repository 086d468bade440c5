import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset (48 px) shared by trainer and CLI tests."""
    from dawsol.data import SyntheticSpec, generate_synthetic

    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic(SyntheticSpec(splits={"train": 64, "test": 16}, image_size=48, seed=3), root)
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
