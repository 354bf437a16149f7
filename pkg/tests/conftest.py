import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xxzlab.ensemble import DisorderSpec, sample_disorder  # noqa: E402
from xxzlab.geometry import ChainRegion  # noqa: E402
from xxzlab.hamiltonian import ModelParams  # noqa: E402
from xxzlab.sample import SampleContext  # noqa: E402


def make_ctx(L, delta=10.0, lam=10.0, seed=0, index=0):
    reg = ChainRegion(1, L)
    return SampleContext(ModelParams(delta, lam), sample_disorder(DisorderSpec(), seed, index, reg))


@pytest.fixture
def ctx_factory():
    return make_ctx


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)
