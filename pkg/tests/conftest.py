import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lsmtune.bench import sample_benchmark  # noqa: E402
from lsmtune.cost_model import SystemParams  # noqa: E402

# 10^10 entries of 1 KB, 4 entries per page, 10 bits of memory per entry
LARGE_SYS = SystemParams(N=1e10, E=8192, B=4, m=1e11, s_rq=1e-9)
# 10^6 entries of 64 B, 64 entries per page, 10 bits per entry
DESK_SYS = SystemParams(N=1e6, E=512, B=64, m=1e7, s_rq=64e-6)


@pytest.fixture(scope="session")
def large_sys():
    return LARGE_SYS


@pytest.fixture(scope="session")
def desk_sys():
    return DESK_SYS


@pytest.fixture(scope="session")
def bench10k():
    return sample_benchmark(seed=0, size=10_000)


# acceptance verdicts, filled by test_acceptance and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
