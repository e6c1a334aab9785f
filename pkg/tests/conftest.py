import pytest
from hypothesis import settings

from tapcheck.ir import BoolDomain, EnumDomain, IntDomain, Kind

from util import mkattr

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


@pytest.fixture
def home_attrs():
    """A small household attribute table shared by many tests."""
    return {
        "temp": mkattr("temp", IntDomain(0, 30, "C"), Kind.TARDY),
        "mode": mkattr("mode", EnumDomain(("home", "away", "night"))),
        "motion": mkattr("motion", BoolDomain()),
        "heater": mkattr("heater", EnumDomain(("on", "off"))),
        "window": mkattr("window", EnumDomain(("on", "off"))),
        "light": mkattr("light", EnumDomain(("on", "off"))),
    }
