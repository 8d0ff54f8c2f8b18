from __future__ import annotations

import logging
import os

import pytest

CRITERIA = {
    1: "state-machine oracle equivalence",
    2: "termination bound",
    3: "delegation-flag enforcement",
    4: "preserved-term fidelity",
    5: "replay determinism",
    6: "parser robustness",
    7: "wire-format golden files",
    8: "search cache/fixture guarantees",
    9: "live smoke test (non-gating)",
}

_outcomes: dict[int, list[str]] = {}


def pytest_addoption(parser: pytest.Parser) -> None:
    group = parser.getgroup("crewline")
    group.addoption("--live-url", default=os.environ.get("CREWLINE_LIVE_URL"), help="OpenAI-compatible base URL for the live smoke test")
    group.addoption("--live-model", default="aya-expanse:8b", help="model name for the live smoke test")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number this test covers")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog: pytest.LogCaptureFixture) -> None:
    caplog.set_level(logging.CRITICAL, logger="crewline")


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    number = getattr(report, "criterion", None)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(number, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item: pytest.Item, call: pytest.CallInfo):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter, exitstatus: int, config: pytest.Config) -> None:
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            continue
        if "failed" in results:
            verdict = "FAIL"
        elif all(r == "skipped" for r in results):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title} ({len(results)} checks)")
