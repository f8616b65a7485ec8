import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from morphflow.volume import Volume  # noqa: E402

_ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture(scope="session")
def frozen():
    """Reference values written by scripts/freeze_oracles.py."""
    return json.loads((Path(__file__).parent / "data" / "oracle_values.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_volume(rng, shape, integer=False, high=4095):
    if integer:
        return Volume.from_array(rng.integers(0, high + 1, size=shape).astype(np.float64))
    return Volume.from_array(rng.random(shape))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "passed": True, "detail": ""})
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["passed"] = entry["passed"] and rep.passed
        details = [v for k, v in item.user_properties if k == "detail"]
        if details:
            entry["detail"] = details[-1]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"[{status}] {number:2d}. {e['title']}"
        if e["detail"]:
            line += f"  ({e['detail']})"
        tr.write_line(line)
