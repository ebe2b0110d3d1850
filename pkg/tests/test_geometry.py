import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitforge.geometry import (
    LEVEL_TOL,
    ChartError,
    ChartWarning,
    ProjectionError,
    attach_critical_points,
    chart_for,
    connection_gate,
    extract_domain,
    polyline_distance,
    project_to_boundary,
)
from orbitforge.potential import ExprPotential, builtin, find_critical_points, shift

from .conftest import DISK_BOX, EX2_BOX, PERTURBED_BOX, make_chart


def test_disk_single_circle(disk, disk_chart):
    assert disk_chart.n_components == 1
    comp = disk_chart.components[0]
    assert comp.closed and not comp.is_singleton
    assert np.array_equal(comp.polyline[0], comp.polyline[-1])
    assert comp.diameter == pytest.approx(2.0, abs=disk_chart.grid.cell_diagonal)
    assert np.allclose(np.linalg.norm(comp.polyline, axis=1), 1.0, atol=1e-9)
    assert not disk_chart.touches_bbox


def test_polyline_nodes_on_zero_level(disk, disk_chart, ex2_shifted, ex2_chart, two_wall):
    V2, chart2 = two_wall
    for V, chart in ((disk, disk_chart), (ex2_shifted, ex2_chart), (V2, chart2)):
        for comp in chart.components:
            assert np.max(np.abs(V.value(comp.polyline))) < LEVEL_TOL


def test_ex2_single_curve_with_four_saddles(ex2_chart):
    assert ex2_chart.n_components == 1
    comp = ex2_chart.components[0]
    cps = [ex2_chart.critical_points[i] for i in comp.critical_points]
    locs = np.array(sorted(tuple(c.location) for c in cps))
    assert np.allclose(locs, [(-1.0, 0.0), (0.0, -0.5), (0.0, 0.5), (1.0, 0.0)], atol=1e-9)
    assert all(c.morse_index == 1 for c in cps)


def test_perturbed_component_counts(perturbed, perturbed_levels):
    u2, u1 = perturbed_levels
    cases = [(-u2, 2, 2), (-0.5 * u2, 2, 0), (0.0, 3, 1), (-0.5 * u1, 3, 0)]
    for alpha, count, singletons in cases:
        chart = make_chart(shift(perturbed, alpha), PERTURBED_BOX)
        assert chart.n_components == count, alpha
        assert sum(c.is_singleton for c in chart.components) == singletons, alpha


def test_heteroclinic_singletons_are_wells(perturbed, perturbed_levels):
    chart = make_chart(shift(perturbed, -perturbed_levels[0]), PERTURBED_BOX)
    p2 = perturbed.critical_points_closed_form()["p2"]
    pts = sorted((tuple(chart.singleton_point(c.id)) for c in chart.components), key=lambda p: p[0])
    assert np.allclose(pts, [-p2, p2], atol=1e-8)


def test_gap_matrix_symmetric_positive(two_wall):
    _, chart = two_wall
    g = chart.gap_matrix
    assert np.array_equal(g, g.T)
    assert np.all(np.diag(g) == 0)
    assert np.all(g[~np.eye(len(g), dtype=bool)] > 0)


@pytest.mark.parametrize("which", ["disk", "ex2", "two_wall"])
def test_resolution_doubling(which, disk, ex2_shifted, two_wall):
    V, box = {"disk": (disk, DISK_BOX), "ex2": (ex2_shifted, EX2_BOX), "two_wall": (two_wall[0], PERTURBED_BOX)}[which]
    coarse = make_chart(V, box, 128)
    fine = make_chart(V, box, 256)
    assert coarse.n_components == fine.n_components
    h = coarse.grid.cell_diagonal
    assert np.max(np.abs(coarse.gap_matrix - fine.gap_matrix)) < h
    for a, b in zip(coarse.components, fine.components):
        assert abs(a.diameter - b.diameter) < h


def test_seed_errors(disk):
    with pytest.raises(ChartError):
        extract_domain(disk, (1.2, 0.0), DISK_BOX, 64)
    with pytest.raises(ChartError):
        chart_for(ExprPotential.from_source("-1 - x1^2 - x2^2"), DISK_BOX, 32)


def test_touching_bbox_warns():
    with pytest.warns(ChartWarning):
        chart_for(ExprPotential.from_source("1 - x2^2"), DISK_BOX, 32)


def test_no_critical_points_leaves_chart_unchanged(disk):
    chart = extract_domain(disk, (0.0, 0.0), DISK_BOX, 64)
    again = attach_critical_points(chart, [])
    assert again.n_components == chart.n_components
    assert not any(c.is_singleton or c.critical_points for c in again.components)


def test_zero_level_saddle_off_chart_warns(ex2_shifted):
    # chart of the unit disk, saddles of ex2 at (0, +-1/2) lie inside it, away from the circle
    chart = extract_domain(builtin("disk"), (0.0, 0.0), DISK_BOX, 64)
    cps = [c for c in find_critical_points(ex2_shifted, EX2_BOX) if abs(c.location[0]) < 0.1]
    with pytest.warns(ChartWarning):
        again = attach_critical_points(chart, cps)
    assert again.n_components == 1


def test_project_to_boundary_examples(disk, ex2_shifted):
    assert np.allclose(project_to_boundary(disk, (0.5, 0.0)), (1.0, 0.0), atol=1e-10)
    assert np.allclose(project_to_boundary(disk, (0.3, 0.4)), (0.6, 0.8), atol=1e-10)
    x = project_to_boundary(ex2_shifted, (0.9, 0.0))
    assert abs(ex2_shifted.value(x)) < LEVEL_TOL
    assert x[1] == 0.0 and 0.9 < x[0] <= 1.0
    with pytest.raises(ProjectionError):
        project_to_boundary(ExprPotential.from_source("1 + x1^2 + x2^2"), (0.0, 0.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 1.4), st.floats(0, 2 * np.pi))
def test_disk_projection_is_radial(r, theta):
    x = r * np.array([np.cos(theta), np.sin(theta)])
    y = project_to_boundary(builtin("disk"), x)
    assert abs(np.linalg.norm(y) - 1.0) < 1e-10
    assert np.allclose(y, x / r, atol=1e-8)


def test_connection_gate_examples():
    d = [[0, 1, 3], [1, 0, 1], [3, 1, 0]]
    assert not connection_gate(d, 0, 2)  # 3 < 1 + 1 fails
    assert connection_gate(d, 0, 1)
    assert connection_gate([[0, 5], [5, 0]], 0, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=1))
def test_gate_vacuous_for_two_components(v):
    assert connection_gate(np.array([[0.0, v[0]], [v[0], 0.0]]), 1, 0)


def test_chart_json_roundtrip(two_wall):
    _, chart = two_wall
    data = json.loads(chart.to_json())
    assert len(data["components"]) == chart.n_components
    assert np.allclose(data["gap_matrix"], chart.gap_matrix)
    for comp, raw in zip(chart.components, data["components"]):
        assert np.allclose(raw["polyline"], comp.polyline)
        assert raw["diameter"] == comp.diameter


def test_polyline_distance():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    assert polyline_distance(square, (0.5, -2.0)) == pytest.approx(2.0)
    assert polyline_distance(square, (0.5, 0.5)) == pytest.approx(0.5)


def test_chart_is_deterministic(ex2_shifted):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = chart_for(ex2_shifted, EX2_BOX, 96)
        b = chart_for(ex2_shifted, EX2_BOX, 96)
    assert a.to_json() == b.to_json()
