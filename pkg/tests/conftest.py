import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_couplings(n, seed, r_b=1.5, box=3.0):
    """Soft-core couplings between ``n`` random points in a square box."""
    from rydsqueeze.lattice import CouplingMatrix

    pts = np.random.default_rng(seed).uniform(0, box, size=(n, 2))
    r = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    with np.errstate(divide="ignore"):
        j = 1.0 / (1.0 + (r / r_b) ** 6)
    np.fill_diagonal(j, 0.0)
    return CouplingMatrix.from_matrix(j)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


_CRITERIA: dict[int, list[tuple[str, str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        verdict = "PASS" if all(outcome == "passed" for _, outcome, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}")
        for name, outcome, detail in parts:
            terminalreporter.write_line(f"    {outcome.upper():7s} {name}" + (f" [{detail}]" if detail else ""))
