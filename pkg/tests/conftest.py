import numpy as np
import pytest

from saemort.harness import reference_world
from saemort.hmd import HMDDirectory
from saemort.knowledge import assemble_dk
from saemort.synthhmd import write_synthetic_hmd


@pytest.fixture(scope="session")
def hmd_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("hmd")
    write_synthetic_hmd(root)
    return root


@pytest.fixture(scope="session")
def hmd(hmd_root):
    return HMDDirectory(hmd_root)


@pytest.fixture(scope="session")
def world(hmd):
    return reference_world(hmd)


@pytest.fixture(scope="session")
def dk1(hmd):
    """dk1 artifacts for every method, keyed like the harness expects."""
    return {(m, "dk1"): assemble_dk(m, "dk1", hmd) for m in ("topals", "dspline", "svd")}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
