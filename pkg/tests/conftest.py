"""Shared fixtures; collects one pass/fail line per acceptance criterion for the terminal summary."""

from collections import OrderedDict

import pytest

ACCEPTANCE: "OrderedDict[int, tuple[bool, str]]" = OrderedDict()


@pytest.fixture(scope="session")
def acceptance():
    def report(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}")
    n_pass = sum(p for p, _ in ACCEPTANCE.values())
    terminalreporter.write_line(f"{n_pass}/{len(ACCEPTANCE)} acceptance criteria passed")
