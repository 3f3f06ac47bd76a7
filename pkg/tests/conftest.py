import numpy as np
import pytest
from hypothesis import settings

from hetnet_abs.channel import EfficiencyMatrices

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_instance(rng, n_users, n_bs, n_macro=1, zero_frac=0.0):
    """Generic efficiencies: macros have zero blank-phase columns, small cells gain when macros blank."""
    c_n = rng.uniform(0.2, 3.0, size=(n_users, n_bs))
    c_b = c_n * rng.uniform(1.0, 2.5, size=(n_users, n_bs))
    c_b[:, :n_macro] = 0.0
    if zero_frac > 0:
        c_n[rng.random((n_users, n_bs)) < zero_frac] = 0.0
    return EfficiencyMatrices(c_n, c_b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny(rng):
    return random_instance(rng, 3, 2)


# one summary line per acceptance criterion, printed whether or not output is captured
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
