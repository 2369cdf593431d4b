import math

import pytest

from kdvbs.kernel import build_kernel

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def kernel_003():
    return build_kernel(0.03, TWO_PI)


@pytest.fixture(scope="session")
def kernel_001():
    return build_kernel(0.01, TWO_PI)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
