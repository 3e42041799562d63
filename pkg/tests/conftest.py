import os

import numpy as np
import pytest
from hypothesis import settings

from nongibrat.balance import QuasiBalanceParams
from nongibrat.synthesis import SynthesisConfig, default_profile, generate_panel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

BIG_N = 200_000
SEED = 7
QUASI = QuasiBalanceParams(0.95, 10**0.15)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NONGIBRAT_EXPENSIVE") == "1":
        return
    skip = pytest.mark.skip(reason="expensive; set NONGIBRAT_EXPENSIVE=1 to run")
    for item in items:
        if "expensive" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def profile():
    return default_profile()


@pytest.fixture(scope="session")
def static_panel():
    return generate_panel(SynthesisConfig.defaults(n=BIG_N, seed=SEED))


@pytest.fixture(scope="session")
def quasi_panel():
    return generate_panel(SynthesisConfig.defaults(n=BIG_N, seed=SEED, quasi=QUASI))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
