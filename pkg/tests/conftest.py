import os
from pathlib import Path

import numpy as np
import pytest
import torch

from ddmorozov.forward_nsw import NswParams, assemble_operator, cached_operator

torch.set_num_threads(max(1, os.cpu_count() or 1))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical checks")


@pytest.fixture(scope="session")
def cache_dir() -> Path:
    """The CLI's artifact cache (DDMOROZOV_CACHE or ~/.cache/ddmorozov), so trained networks are reused."""
    p = Path(os.environ.get("DDMOROZOV_CACHE") or Path.home() / ".cache" / "ddmorozov")
    p.mkdir(parents=True, exist_ok=True)
    return p


@pytest.fixture(scope="session")
def default_operator(cache_dir):
    """The d = 601 operator at the default parameters, with SVD."""
    return cached_operator(cache_dir / "operator_default.bin", NswParams())


@pytest.fixture(scope="session")
def small_operator():
    return assemble_operator(NswParams(d=41), n_omega=2**12).with_svd()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary -----------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """``record_criterion(key, passed, detail)`` stores one line for the terminal summary."""

    def record(key: str, passed: bool, detail: str):
        ACCEPTANCE[key] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {key}: {detail}")
