import os

import pytest

from psmatch.synth import glioma_marginals_cohort

# Set to a CSV of the real 839-patient cohort (bundled glioma schema) to run
# the matching/effect reproduction checks against it.
GLIOMA_CSV_ENV = "PSMATCH_GLIOMA_CSV"


@pytest.fixture(scope="session")
def glioma():
    """Cohort rebuilt from the reference marginal tables (no joint structure)."""
    return glioma_marginals_cohort()


@pytest.fixture(scope="session")
def real_glioma_path():
    path = os.environ.get(GLIOMA_CSV_ENV)
    if not path or not os.path.isfile(path):
        pytest.skip(f"{GLIOMA_CSV_ENV} not set; the real glioma cohort is not bundled")
    return path


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record and print the one-line verdict of an acceptance criterion."""

    def verdict(number, title, status, detail):
        line = f"criterion {number} [{status}] {title}: {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return status

    return verdict


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
