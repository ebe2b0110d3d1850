import json
import math
import warnings

import numpy as np
import pytest

from orbitforge.functional import jacobi
from orbitforge.geometry import LEVEL_TOL, chart_for, connection_gate, polyline_distance
from orbitforge.potential import Box, ExprPotential, builtin, shift
from orbitforge.solver import (
    SolveConfig,
    SolverError,
    SymmetryWarning,
    grid_geodesic_oracle,
    jacobi_distance_matrix,
    minimize_jacobi,
    seed_path,
    solve_connecting,
    solve_symmetric,
)

from .conftest import EX2_BOX, central_component, make_chart

DISK_J = math.sqrt(2) * math.pi / 4


def _feasible(V, chart, result):
    x = result.path.nodes
    assert np.all(V.value(x[1:-1]) >= -LEVEL_TOL)
    for end, node in ((result.path.start, x[0]), (result.path.end, x[-1])):
        if end.kind == "origin":
            assert np.array_equal(node, np.zeros(2))
        elif end.kind == "boundary":
            assert abs(V.value(node)) < 1e-8
            assert polyline_distance(chart.components[end.component].polyline, node) < chart.grid.cell_diagonal


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(nodes=8)
    with pytest.raises(ValueError):
        SolveConfig(eps_schedule=(1e-1, 1e-3))
    with pytest.raises(ValueError):
        SolveConfig(eps_schedule=(1e-3, 1e-1, 0.0))
    SolveConfig(eps_schedule=(1e-9,))


def test_disk_symmetric_is_radial(disk, disk_chart, disk_symmetric):
    r = disk_symmetric
    assert r.converged and r.mode == "symmetric"
    assert abs(r.jacobi_value - DISK_J) < 1e-3
    assert r.jacobi_value == jacobi(r.path, disk)
    x = r.path.nodes
    direction = x[-1] / np.linalg.norm(x[-1])
    # every node lies on the ray through the endpoint
    assert np.max(np.abs(x[:, 0] * direction[1] - x[:, 1] * direction[0])) < 1e-3
    _feasible(disk, disk_chart, r)


def test_ex2_symmetric_beats_axis_heteroclinics(ex2_shifted, ex2_chart, ex2_symmetric):
    r = ex2_symmetric
    assert r.converged
    assert r.jacobi_value <= 1 / 3 + 1e-3
    snap = ex2_chart.critpoint_snap
    for c in ex2_chart.critical_points:
        if abs(c.potential_value) < 1e-10:
            assert np.linalg.norm(r.path.nodes[-1] - c.location) >= 10 * snap
    _feasible(ex2_shifted, ex2_chart, r)


def test_seed_symmetric_ray_hits_nearest_point(ex2_shifted, ex2_chart):
    path = seed_path(ex2_chart, "origin", 0, 32, ex2_shifted)
    assert np.array_equal(path.nodes[0], [0.0, 0.0])
    end = path.nodes[-1]
    poly = ex2_chart.components[0].polyline
    assert np.linalg.norm(end) <= np.min(np.linalg.norm(poly, axis=1)) + ex2_chart.grid.cell_diagonal
    assert len(path.nodes) == 33


def test_seed_connecting_realizes_gap(two_wall):
    V, chart = two_wall
    src = central_component(chart)
    for tgt in range(chart.n_components):
        if tgt == src:
            continue
        path = seed_path(chart, src, tgt, 64, V)
        chord = np.linalg.norm(path.nodes[-1] - path.nodes[0])
        assert chord == pytest.approx(chart.gap_matrix[src, tgt], abs=2 * chart.grid.cell_diagonal)
        assert np.all(V.value(path.nodes[1:-1]) >= 0)


def test_restart_is_idempotent(ex2_shifted, ex2_chart, ex2_symmetric):
    cfg = SolveConfig(nodes=128, eps_schedule=(0.0,))
    again = minimize_jacobi(ex2_shifted, ex2_chart, ex2_symmetric.path, cfg)
    assert again.converged
    assert len(again.history) <= 2
    assert abs(again.jacobi_value - ex2_symmetric.jacobi_value) < cfg.convergence_tol


def test_two_wall_targets_tie(two_wall, two_wall_solve):
    V, chart = two_wall
    r = two_wall_solve
    assert r.converged
    src = central_component(chart)
    assert r.source_component == src and r.target_component != src
    vals = [v for t, v in r.per_target.items()]
    assert len(vals) == 2
    assert abs(vals[0] - vals[1]) < 1e-6
    assert r.jacobi_value == min(vals)
    assert r.jacobi_value == jacobi(r.path, V)
    _feasible(V, chart, r)


def test_two_wall_gate_from_solver_distances(two_wall):
    V, chart = two_wall
    d, results = jacobi_distance_matrix(V, chart, SolveConfig(nodes=64))
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
    src = central_component(chart)
    outer = [k for k in range(3) if k != src]
    for k in outer:
        assert connection_gate(d, src, k)
    # the two outer curves are connected more cheaply through the middle one
    assert d[outer[0], outer[1]] > d[src, outer[0]]


@pytest.mark.parametrize("which", ["ex2", "two_wall"])
def test_oracle_sandwich(which, ex2_shifted, ex2_chart, ex2_symmetric, two_wall, two_wall_solve):
    if which == "ex2":
        V, chart, r, src = ex2_shifted, ex2_chart, ex2_symmetric, "origin"
    else:
        (V, chart), r = two_wall, two_wall_solve
        src = r.source_component
    oracle = grid_geodesic_oracle(V, chart, src, r.target_component)
    assert r.jacobi_value <= oracle + 1e-6
    assert oracle <= 1.10 * r.jacobi_value


def test_oracle_refinement_does_not_increase(ex2_shifted):
    coarse = grid_geodesic_oracle(ex2_shifted, make_chart(ex2_shifted, EX2_BOX, 128), "origin", 0)
    fine = grid_geodesic_oracle(ex2_shifted, make_chart(ex2_shifted, EX2_BOX, 256), "origin", 0)
    assert fine <= coarse + 1e-9


def test_oracle_converges_on_disk_ray(disk):
    # axis-aligned ray: no metrication error, only the wall layer where sqrt(V) is concave
    errs = []
    for res in (64, 128, 256):
        chart = make_chart(disk, Box((-1.5, -1.5), (1.5, 1.5)), res)
        errs.append(abs(grid_geodesic_oracle(disk, chart, "origin", 0) - DISK_J))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_oracle_constant_strip():
    # V = min(1/2, 50 (1/4 - x2^2)): flat at 1/2 except thin layers at the walls x2 = +-1/2
    V = ExprPotential.from_source("0.5*(0.5 + 50*(0.25 - x2^2) - abs(0.5 - 50*(0.25 - x2^2)))", smoothness="C0")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        chart = chart_for(V, Box((-1.0, -0.6), (1.0, 0.6)), 128)
    assert chart.n_components == 2
    val = grid_geodesic_oracle(V, chart, 0, 1)
    assert abs(val - 1.0) <= 0.08


def test_polar_oscillatory_converges():
    V = shift(builtin("polar_oscillatory", {"k": 1.0}), 0.3)
    box = Box((-2.0, -2.0), (2.0, 2.0))
    chart = make_chart(V, box, 128)
    r = solve_symmetric(V, chart, SolveConfig(nodes=64, multistart=2))
    assert r.converged
    assert r.jacobi_value > 0


def test_symmetric_preconditions(ex2_shifted, two_wall):
    V, chart = two_wall
    with pytest.raises(SolverError):
        solve_symmetric(V, chart, SolveConfig(nodes=32))  # V(0) < 0 here
    lopsided = ExprPotential.from_source("1 - x1^2 - x2^2 + 0.3*x1")
    chart = make_chart(lopsided, Box((-2.0, -2.0), (2.0, 2.0)), 64)
    with pytest.warns(SymmetryWarning):
        solve_symmetric(lopsided, chart, SolveConfig(nodes=32, multistart=1))


def test_connecting_needs_two_components(disk, disk_chart):
    with pytest.raises(SolverError):
        solve_connecting(disk, disk_chart, 0, SolveConfig(nodes=32))


def test_deterministic_and_thread_independent(disk, disk_chart):
    a = solve_symmetric(disk, disk_chart, SolveConfig(nodes=32, multistart=3, threads=1))
    b = solve_symmetric(disk, disk_chart, SolveConfig(nodes=32, multistart=3, threads=3))
    c = solve_symmetric(disk, disk_chart, SolveConfig(nodes=32, multistart=3, threads=1))
    assert a.jacobi_value == b.jacobi_value == c.jacobi_value
    assert np.array_equal(a.path.nodes, b.path.nodes)


def test_result_dict_roundtrips_through_json(two_wall_solve):
    d = json.loads(json.dumps(two_wall_solve.to_dict()))
    assert d["jacobi"] == two_wall_solve.jacobi_value
    assert len(d["path"]) == two_wall_solve.path.M + 1
