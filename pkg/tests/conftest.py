import numpy as np
import pytest
import torch

from scsd.pipeline.data import CLASS_NAMES

# small, fast estimator settings shared by pipeline-level tests
TINY = dict(
    n_queries=8,
    d_model=32,
    d_emb=16,
    d_style=16,
    channels=(8, 16, 32, 32),
    steps=2,
    batch_size=2,
)


@pytest.fixture
def tiny_params():
    return dict(TINY)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def class_names():
    return CLASS_NAMES


# one line per acceptance criterion, emitted in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
