import warnings

import numpy as np
import pytest

from geobias.synth import make_scenario

_CRITERIA = []


@pytest.fixture(scope="session")
def scenario():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_scenario(seed=11, n_side=20)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        _CRITERIA.append((marker.args[0], marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, title, status, detail in sorted(_CRITERIA):
        line = f"criterion {num} [{status}] {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
