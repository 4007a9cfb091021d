import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by the acceptance tests
VERDICTS: dict[int, tuple[bool, str]] = {}
CRITERIA = range(1, 13)


@pytest.fixture
def verdict():
    def record(n: int, passed: bool, detail: str) -> None:
        VERDICTS[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not any(getattr(r, "nodeid", "").startswith("tests/test_acceptance.py") for k in ("passed", "failed") for r in terminalreporter.stats.get(k, [])):
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        if n in VERDICTS:
            ok, detail = VERDICTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (no verdict recorded, test errored or was deselected)")
