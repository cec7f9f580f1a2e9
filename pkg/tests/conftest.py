import numpy as np
import pytest

from robinopt import BoxBounds, OcpProblem, SourceSpec, DesiredState, build_hierarchy


@pytest.fixture(scope="session")
def meshes():
    return build_hierarchy(6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def smooth_yd(x):
    return 0.3 + 0.2 * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


@pytest.fixture
def problem(meshes):
    """A small Robin problem on level 3 with an unbounded upper bound."""
    return OcpProblem(meshes[3], SourceSpec(f=1.0, g=0.25), DesiredState(smooth_yd),
                      alpha=1e-2, bounds=BoxBounds(0.0, None))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
