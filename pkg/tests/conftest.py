import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrap.topology import OcclusionMask, build_tree

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tree2i():
    return build_tree(2, imaging=True)


@pytest.fixture(scope="session")
def two_bombs(tree2i):
    """Imaging links of branches 1T and T1 blocked."""
    return OcclusionMask.from_pairs(tree2i, [("1T_i", "1T_j"), ("T1_i", "T1_j")])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
