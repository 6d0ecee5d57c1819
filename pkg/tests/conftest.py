import math

import pytest
from hypothesis import settings

from ssr_dynamic.scenarios import SCHIZ_GAMMA, cpz_design, schizophrenia_design

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def schiz():
    return schizophrenia_design()


@pytest.fixture(scope="session")
def cpzd():
    return cpz_design()


@pytest.fixture(scope="session")
def gamma():
    return SCHIZ_GAMMA


@pytest.fixture(scope="session")
def delta(schiz):
    return 1.6 / 15.0 * math.sqrt(208)
