import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gst.bundle import write_bundle
from gst.synth import make_fixture

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def fixture_bundle():
    return make_fixture()


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory, fixture_bundle):
    return write_bundle(fixture_bundle, tmp_path_factory.mktemp("bundle") / "fixture")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def read_data(name: str) -> str:
    with open(os.path.join(DATA, name), encoding="utf-8") as fh:
        return fh.read()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) == "call":
                lines += [v for k, v in getattr(rep, "user_properties", ()) if k == "criterion"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
