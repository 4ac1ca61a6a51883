import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(k for k in results if "-" not in k):
        passed, detail = results[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {key}: {detail}")
    for key, (passed, detail) in getattr(module, "EXAMPLES", {}).items():
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] example {key}: {detail}")
