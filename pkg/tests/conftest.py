import numpy as np
import pytest
from hypothesis import settings

from cachepool import Catalog, Constant, FlowSpec, Zipf, build_catalog

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def zipf2_catalog():
    """One Zipf(2) flow over 1e5 unit-size items."""
    return build_catalog([FlowSpec(1.0, Zipf(2.0), 100_000)])


@pytest.fixture(scope="session")
def experiment2_catalog():
    fams = [Zipf(2.5, c=0.7454)] * 5 + [Zipf(1.5, c=0.3831)] * 5
    return build_catalog([FlowSpec(0.1, f, 1_000_000) for f in fams])


@pytest.fixture
def tiny_catalog():
    """Three unit items requested by a single flow."""
    return Catalog.from_arrays([1, 1, 1], [1.0], [np.arange(3)], [[0.5, 0.3, 0.2]])


def two_flow_catalog(alpha=2.0, n=10_000, nu=(0.5, 0.5), sizes=(1, 1)):
    return build_catalog([FlowSpec(v, Zipf(alpha), n, Constant(s)) for v, s in zip(nu, sizes)])


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome.upper()[:4], props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {n}: {verdict} {detail}")
