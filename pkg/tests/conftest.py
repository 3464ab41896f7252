import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> [title, outcomes, seconds]
_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test covers")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, [title, [], 0.0])
    entry[1].append(rep.passed)
    entry[2] += rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, results, secs = _criteria[n]
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(
            f"criterion {n}: {verdict}  {title}  ({sum(results)}/{len(results)} checks, {secs:.1f}s)"
        )
