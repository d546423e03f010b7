import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gcan.model import GcanConfig  # noqa: E402
from gcan.synthgen import GeneratorConfig, generate  # noqa: E402

TINY = dict(m=6, n=5, d=4, g=4, lam=2, k=3, hidden=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return GcanConfig(**TINY, epochs=2, batch_size=4)


@pytest.fixture(scope="session")
def small_dataset():
    return generate(GeneratorConfig(n_stories=40, min_retweets=3, max_retweets=12, seed=7))


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
