import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from umixformer.autodiff import Tape
from umixformer.config import ModelConfig, tiny_config

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")


def leaf(arr):
    return Tape(record=False).leaf(np.asarray(arr, dtype=np.float64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def toy():
    return ModelConfig()
