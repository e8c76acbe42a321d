"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        _ACCEPTANCE[report.nodeid] = (props["criterion"], props.get("detail", ""), report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, detail, outcome in sorted(_ACCEPTANCE.values(), key=lambda r: int(r[0].split(":")[0])):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {label}" + (f" | {detail}" if detail else ""))


@pytest.fixture
def criterion(record_property):
    """Tag an acceptance test: ``criterion("3: title")`` then ``criterion.detail("...")``."""

    class Tag:
        def __call__(self, label):
            record_property("criterion", label)

        def detail(self, text):
            record_property("detail", text)

    return Tag()
