import warnings

import numpy as np
import pytest

from orbitforge.geometry import chart_for
from orbitforge.potential import Box, builtin, find_critical_points, shift
from orbitforge.solver import SolveConfig, solve_connecting, solve_symmetric

PERTURBED_BOX = Box((-1.0, -0.5), (1.0, 0.5))
EX2_BOX = Box((-1.5, -1.0), (1.5, 1.0))
DISK_BOX = Box((-1.5, -1.5), (1.5, 1.5))


def make_chart(V, box, resolution=256):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return chart_for(V, box, resolution, critical_points=find_critical_points(V, box))


@pytest.fixture(scope="session")
def perturbed():
    return builtin("perturbed", {"lambda": 0.5})


@pytest.fixture(scope="session")
def perturbed_levels(perturbed):
    """(U(p2), U(p1)) from the critical points, not hard-coded."""
    vals = sorted(p.potential_value for p in find_critical_points(perturbed, PERTURBED_BOX))
    return vals[0], vals[-1]


@pytest.fixture(scope="session")
def ex2_shifted():
    return shift(builtin("ex2"), -0.5)


@pytest.fixture(scope="session")
def ex2_chart(ex2_shifted):
    return make_chart(ex2_shifted, EX2_BOX)


@pytest.fixture(scope="session")
def ex2_symmetric(ex2_shifted, ex2_chart):
    return solve_symmetric(ex2_shifted, ex2_chart, SolveConfig(nodes=128))


@pytest.fixture(scope="session")
def disk():
    return builtin("disk")


@pytest.fixture(scope="session")
def disk_chart(disk):
    return make_chart(disk, DISK_BOX)


@pytest.fixture(scope="session")
def disk_symmetric(disk, disk_chart):
    return solve_symmetric(disk, disk_chart, SolveConfig(nodes=256))


@pytest.fixture(scope="session")
def two_wall(perturbed, perturbed_levels):
    """perturbed(0.5) with -alpha = U(p1)/2: three walls."""
    V = shift(perturbed, -0.5 * perturbed_levels[1])
    return V, make_chart(V, PERTURBED_BOX)


@pytest.fixture(scope="session")
def two_wall_solve(two_wall):
    V, chart = two_wall
    return solve_connecting(V, chart, central_component(chart), SolveConfig(nodes=128))


def central_component(chart):
    """The component closest to the origin."""
    return int(np.argmin([np.linalg.norm(c.polyline.mean(axis=0)) for c in chart.components]))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
