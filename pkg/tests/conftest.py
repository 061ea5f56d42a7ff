import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import pytest  # noqa: E402

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
CRITERIA = {}


@pytest.fixture
def criterion():
    def record(number, title, passed, detail=""):
        CRITERIA[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        line = f"criterion {number:2d}  {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
    ok = sum(p for _, p, _ in CRITERIA.values())
    terminalreporter.write_line(f"{ok}/{len(CRITERIA)} criteria pass")
