"""Minimization of the discrete Jacobi length over constrained paths.

Descent is on the regularized length

    J_delta(x) = sum_k sqrt(2 (Vbar_k + delta)) |x_{k+1} - x_k|

for a decreasing schedule of ``delta`` ending at 0.  Each step solves a
tridiagonal system whose weights are the segment tensions ``w_k / |dx_k|``
(a Sobolev-type preconditioner), then backtracks on the constrained trial path.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .functional import DiscretePath, Endpoint, jacobi, segment_weights
from .geometry import (
    LEVEL_TOL,
    DomainChart,
    ProjectionError,
    _cut_edges,
    _omega_mask,
    nearest_on_polyline,
    polyline_distance,
    project_to_boundary,
    sample_grid,
)
from .potential import Potential, check_antipodal_symmetry

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SolverDivergence(SolverError):
    pass


class SymmetryWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolveConfig:
    nodes: int = 128
    eps_schedule: tuple = (1e-1, 1e-2, 1e-3, 0.0)
    max_iters: int = 1000
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    remesh_every: int = 10
    convergence_tol: float = 1e-8
    multistart: int = 4
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError("node count M must be at least 16")
        eps = tuple(float(e) for e in self.eps_schedule)
        if not eps or eps[-1] > 1e-8:
            raise ValueError("eps schedule must end at 0 (or below 1e-8)")
        if any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps schedule must be decreasing")
        if self.multistart < 1:
            raise ValueError("multistart must be at least 1")
        object.__setattr__(self, "eps_schedule", eps)


@dataclass
class SolveResult:
    path: DiscretePath
    jacobi_value: float
    source_component: Optional[int]
    target_component: Optional[int]
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    per_target: dict = field(default_factory=dict)
    snapped: tuple = (None, None)  # critical point id snapped to at each end
    mode: str = "connecting"
    start_index: int = 0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "jacobi": self.jacobi_value,
            "source_component": self.source_component,
            "target_component": self.target_component,
            "converged": self.converged,
            "iterations": self.iterations,
            "history": self.history,
            "per_target": {str(k): v for k, v in self.per_target.items()},
            "snapped": list(self.snapped),
            "start": self.path.start.to_dict(),
            "end": self.path.end.to_dict(),
            "path": self.path.nodes.tolist(),
        }


# --------------------------------------------------------------------------- #
# seeds


def _halton(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def _end_point(chart: DomainChart, cid, toward) -> np.ndarray:
    if cid == "origin":
        return np.zeros(chart.bbox.dimension)
    p = chart.singleton_point(cid)
    if p is not None:
        return p
    return nearest_on_polyline(chart.components[cid].polyline, toward)


def _closest_pair(chart: DomainChart, source, target):
    """Closest points between two components (or the origin and a component)."""
    if source == "origin":
        a = np.zeros(chart.bbox.dimension)
        return a, _end_point(chart, target, a)
    pa = chart.singleton_point(source)
    pb = chart.singleton_point(target)
    if pa is not None and pb is not None:
        return pa, pb
    if pa is not None:
        return pa, _end_point(chart, target, pa)
    if pb is not None:
        return _end_point(chart, source, pb), pb
    A = chart.components[source].polyline
    B = chart.components[target].polyline
    from scipy.spatial import cKDTree

    d, j = cKDTree(B).query(A, k=1)
    i = int(np.argmin(d))
    a = A[i]
    b = nearest_on_polyline(B, a)
    return nearest_on_polyline(A, b), b


def _endpoint_mode(chart: DomainChart, cid) -> Endpoint:
    if cid == "origin":
        return Endpoint.origin()
    return Endpoint.on_boundary(cid)


def _nudge_inside(V: Potential, x: np.ndarray, offset: float) -> np.ndarray:
    x = x.copy()
    v = np.asarray(V.value(x), dtype=float)
    for k in np.nonzero(v <= 0)[0]:
        if k in (0, len(x) - 1):
            continue
        try:
            p = project_to_boundary(V, x[k])
        except ProjectionError:
            continue
        g = V.grad(p)
        gn = np.linalg.norm(g)
        x[k] = p + offset * g / gn if gn > 0 else p
    return x


def seed_path(chart: DomainChart, source, target, M: int, V: Potential, variant: int = 0) -> DiscretePath:
    """Straight segment between the closest points of two components.

    ``source`` may be ``"origin"`` (symmetric half paths).  ``variant > 0``
    gives deterministic low-discrepancy perturbations: the target end slides
    along its polyline and the segment gets a transverse bump.
    """
    if source == target:
        raise ValueError("source and target must differ")
    a, b = _closest_pair(chart, source, target)
    if variant > 0 and chart.singleton_point(target) is None:
        poly = chart.components[target].polyline
        seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        k0 = int(np.argmin(np.linalg.norm(poly - b, axis=1)))
        frac = (s[k0] / s[-1] + 0.25 * (_halton(variant, 2) - 0.5)) % 1.0
        b = np.array([np.interp(frac * s[-1], s, poly[:, d]) for d in range(poly.shape[1])])
    t = np.linspace(0.0, 1.0, M + 1)[:, None]
    x = a + t * (b - a)
    if variant > 0 and x.shape[1] == 2:
        d = b - a
        normal = np.array([-d[1], d[0]]) / max(np.linalg.norm(d), 1e-300)
        amp = (_halton(variant, 3) - 0.5) * 0.2 * np.linalg.norm(d)
        x = x + amp * np.sin(np.pi * t) * normal
    lo, hi = np.asarray(chart.bbox.lo), np.asarray(chart.bbox.hi)
    if np.any(x < lo) or np.any(x > hi):
        raise SolverError("seed segment leaves the bounding box")
    x = _nudge_inside(V, x, 1e-6 * chart.bbox.diagonal)
    return DiscretePath(x, _endpoint_mode(chart, source), _endpoint_mode(chart, target))


# --------------------------------------------------------------------------- #
# descent


class _Problem:
    """Constraint bookkeeping for one path."""

    def __init__(self, V: Potential, chart: Optional[DomainChart], path: DiscretePath):
        self.V = V
        self.chart = chart
        self.start, self.end = path.start, path.end
        self.free = [self._is_free(path.start), self._is_free(path.end)]
        self.pins = [self._pin(path.start, path.nodes[0]), self._pin(path.end, path.nodes[-1])]

    def _is_free(self, ep: Endpoint) -> bool:
        return ep.kind == "boundary" and (self.chart is None or self.chart.singleton_point(ep.component) is None)

    def _pin(self, ep: Endpoint, x0) -> Optional[np.ndarray]:
        if ep.kind == "origin":
            return np.zeros(len(x0))
        if ep.kind == "fixed":
            return np.asarray(ep.point if ep.point is not None else x0, dtype=float)
        if self.chart is not None:
            p = self.chart.singleton_point(ep.component)
            if p is not None:
                return p
        return None

    def _project_end(self, x, ep: Endpoint) -> np.ndarray:
        p = project_to_boundary(self.V, x)
        if self.chart is not None and len(self.chart.components) > 1:
            cid, _ = self.chart.nearest_component(p)
            if cid != ep.component:
                raise ProjectionError("endpoint left its boundary component")
        return p

    def constrain(self, x: np.ndarray, offset: float) -> np.ndarray:
        x = x.copy()
        for idx, ep, pin, free in ((0, self.start, self.pins[0], self.free[0]),
                                   (-1, self.end, self.pins[1], self.free[1])):
            if pin is not None:
                x[idx] = pin
            elif free:
                x[idx] = self._project_end(x[idx], ep)
        v = np.asarray(self.V.value(x[1:-1]), dtype=float)
        if np.any(v <= 0):
            x = _nudge_inside(self.V, x, offset)
        return x


def _objective(x, V, delta):
    w, L, v = segment_weights(x, V, delta)
    return float(np.sum(w * L)), w, L, v


def _gradient(x, V, delta):
    J, w, L, v = _objective(x, V, delta)
    dx = np.diff(x, axis=0)
    Ls = np.maximum(L, 1e-300)
    that = dx / Ls[:, None]
    ws = np.maximum(w, 1e-300)
    g = np.zeros_like(x)
    g[1:] += (w[:, None] * that)
    g[:-1] -= (w[:, None] * that)
    gv = np.asarray(V.grad(x), dtype=float) * (v > 0)[:, None]
    coef = np.zeros(len(x))
    coef[1:] += L / ws
    coef[:-1] += L / ws
    g += 0.5 * coef[:, None] * gv
    return J, g, w, Ls


def _precondition(g, w, L, free_mask):
    """Solve A d = -g on free nodes; A is the tension Laplacian."""
    a = w / L
    n = len(g)
    diag = np.zeros(n)
    diag[1:] += a
    diag[:-1] += a
    off = -a
    idx = np.nonzero(free_mask)[0]
    if not len(idx):
        return np.zeros_like(g)
    # free nodes are contiguous: optional first, interior, optional last
    d = diag[idx] * (1 + 1e-12) + 1e-300
    upper = np.zeros(len(idx))
    lower = np.zeros(len(idx))
    o = off[idx[:-1]] if len(idx) > 1 else np.zeros(0)
    # off[k] couples nodes k and k+1
    upper[1:] = o
    lower[:-1] = o
    ab = np.vstack([upper, d, lower])
    out = np.zeros_like(g)
    out[idx] = -solve_banded((1, 1), ab, g[idx])
    return out


def _remesh(x: np.ndarray, V: Potential, delta: float) -> np.ndarray:
    """Redistribute nodes: half Euclidean arclength, half Jacobi arclength."""
    w, L, _ = segment_weights(x, V, delta)
    eu = np.concatenate([[0.0], np.cumsum(L)])
    ja = np.concatenate([[0.0], np.cumsum(w * L)])
    if eu[-1] <= 0:
        return x
    s = 0.5 * eu / eu[-1] + (0.5 * ja / ja[-1] if ja[-1] > 0 else 0.5 * eu / eu[-1])
    keep = np.concatenate([[True], np.diff(s) > 0])
    s, xs = s[keep], x[keep]
    target = np.linspace(0.0, 1.0, len(x))
    out = np.stack([np.interp(target, s, xs[:, d]) for d in range(x.shape[1])], axis=1)
    out[0], out[-1] = x[0], x[-1]
    return out


def _try_remesh(prob: _Problem, x, delta, offset):
    try:
        return prob.constrain(_remesh(x, prob.V, delta), offset)
    except ProjectionError:
        return x


def _drop_tangential(d, x):
    """Interior nodes move normal to the path; spacing is left to remeshing."""
    tau = x[2:] - x[:-2]
    n = np.linalg.norm(tau, axis=1)
    tau = tau / np.maximum(n, 1e-300)[:, None]
    d = d.copy()
    d[1:-1] -= np.sum(d[1:-1] * tau, axis=1)[:, None] * tau
    return d


def _tangent_only(d, x, prob: _Problem):
    """Free boundary endpoints may only slide along the level set."""
    for idx, free in ((0, prob.free[0]), (-1, prob.free[1])):
        if free:
            gv = prob.V.grad(x[idx])
            nn = np.linalg.norm(gv)
            if nn > 0:
                nvec = gv / nn
                d[idx] -= (d[idx] @ nvec) * nvec
    return d


def _descend_stage(prob: _Problem, x, delta, cfg: SolveConfig, offset: float, step_cap: float):
    """One eps stage.  Returns the best remeshed iterate seen."""
    V = prob.V
    free_mask = np.ones(len(x), dtype=bool)
    free_mask[0] = prob.free[0]
    free_mask[-1] = prob.free[1]
    J0 = _objective(x, V, delta)[0]
    best_x, best_J = x, J0
    J_cycle = J0
    s = 1.0
    iters = 0
    converged = False
    stalls = 0
    flat = 0
    for it in range(cfg.max_iters):
        iters += 1
        J, g, w, L = _gradient(x, V, delta)
        g = _tangent_only(g, x, prob)
        g[~free_mask] = 0.0
        d = _drop_tangential(_tangent_only(_precondition(g, w, L, free_mask), x, prob), x)
        slope = float(np.sum(g * d))
        if not slope < 0:
            d = _drop_tangential(-g, x)
            slope = float(np.sum(g * d))
        if not slope < 0 or not np.isfinite(slope):
            converged = True
            break
        dmax = float(np.max(np.linalg.norm(d, axis=1)))
        s = min(1.0, 2.0 * s, step_cap / dmax if dmax > 0 else 1.0)
        accepted = False
        for _ in range(cfg.max_backtracks):
            try:
                trial = prob.constrain(x + s * d, offset)
                Jt = _objective(trial, V, delta)[0]
            except ProjectionError:
                Jt = np.inf
            if np.isfinite(Jt) and Jt <= J + cfg.armijo * s * slope:
                accepted = True
                break
            s *= cfg.shrink
        if not accepted:
            stalls += 1
            if stalls >= 2:
                converged = True
                break
            x = _try_remesh(prob, x, delta, offset)
            continue
        stalls = 0
        x = trial
        if (it + 1) % cfg.remesh_every == 0:
            x = _try_remesh(prob, x, delta, offset)
            Jn = _objective(x, V, delta)[0]
            if Jn < best_J:
                best_x, best_J = x, Jn
            # relative decrease over one remesh cycle; growth counts as stalled
            flat = flat + 1 if J_cycle - Jn < cfg.convergence_tol * abs(Jn) else 0
            if flat >= 3:
                converged = True
                break
            J_cycle = min(J_cycle, Jn)
    J_end = _objective(x, V, delta)[0]
    if J_end > J0 * (1 + 1e-2):
        raise SolverDivergence(f"J grew across a stage: {J0:.6g} -> {J_end:.6g}")
    if J_end < best_J:
        best_x, best_J = x, J_end
    return best_x, best_J, iters, converged


def minimize_jacobi(V: Potential, chart: Optional[DomainChart], path0: DiscretePath,
                    cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Staged preconditioned descent on the regularized Jacobi length."""
    prob = _Problem(V, chart, path0)
    diag = chart.bbox.diagonal if chart is not None else float(np.ptp(path0.nodes, axis=0).max() or 1.0)
    offset = 1e-6 * diag
    step_cap = 0.1 * diag
    x = prob.constrain(path0.nodes, offset)
    vmax = float(np.max(V.value(x)))
    history = []
    total = 0
    converged = False
    for eps in cfg.eps_schedule:
        delta = eps * vmax
        x = _try_remesh(prob, x, delta, offset)
        x, J, iters, converged = _descend_stage(prob, x, delta, cfg, offset, step_cap)
        history.append(J)
        total += iters
    snapped = [None, None]
    if chart is not None:
        snap = chart.critpoint_snap
        for idx, ep, free in ((0, path0.start, prob.free[0]), (1, path0.end, prob.free[1])):
            k = 0 if idx == 0 else -1
            if ep.kind != "boundary":
                continue
            host = chart.components[ep.component].critical_points
            for cp_id in host:
                p = np.asarray(chart.critical_points[cp_id].location)
                if np.linalg.norm(x[k] - p) <= snap:
                    x[k] = p
                    snapped[idx] = cp_id
                    break
    path = DiscretePath(x, path0.start, path0.end)
    src = path0.start.component if path0.start.kind == "boundary" else None
    tgt = path0.end.component if path0.end.kind == "boundary" else None
    return SolveResult(path=path, jacobi_value=jacobi(path, V), source_component=src, target_component=tgt,
                       converged=converged, iterations=total, history=history, snapped=tuple(snapped))


# --------------------------------------------------------------------------- #
# drivers


def _workers(cfg: SolveConfig) -> int:
    cap = os.environ.get("ORBITFORGE_THREADS")
    n = cfg.threads if cfg.threads is not None else 1
    if cap:
        n = min(n, max(1, int(cap))) if cfg.threads is not None else max(1, int(cap))
    return max(1, n)


def _run_tasks(fn, tasks, cfg: SolveConfig):
    n = _workers(cfg)
    if n == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks))


def _multistart(V, chart, source, target, cfg: SolveConfig):
    def one(variant):
        try:
            p0 = seed_path(chart, source, target, cfg.nodes, V, variant)
            r = minimize_jacobi(V, chart, p0, cfg)
            r.start_index = variant
            return r
        except (SolverError, ProjectionError) as exc:
            logger.info("start %s of %s -> %s failed: %s", variant, source, target, exc)
            return None

    return one


def _best(results, rtol=1e-9):
    """Lowest J among converged starts (first start wins ties); if no start
    converged, the lowest J overall."""
    results = [r for r in results if r is not None]
    pool = [r for r in results if r.converged] or results
    if not pool:
        return None
    best = pool[0]
    for r in pool[1:]:
        if r.jacobi_value < best.jacobi_value * (1 - rtol):
            best = r
    return best


def solve_connecting(V: Potential, chart: DomainChart, source: int, cfg: SolveConfig = SolveConfig(),
                     targets: Optional[Sequence[int]] = None) -> SolveResult:
    """Minimal connection from ``source`` over all other components."""
    if chart.n_components < 2:
        raise SolverError("connecting mode needs at least two boundary components")
    targets = [c.id for c in chart.components if c.id != source] if targets is None else list(targets)
    tasks = [(t, k) for t in targets for k in range(cfg.multistart)]
    runners = {t: _multistart(V, chart, source, t, cfg) for t in targets}
    out = _run_tasks(lambda tk: runners[tk[0]](tk[1]), tasks, cfg)
    per_target = {}
    best_per = {}
    for t in targets:
        b = _best([r for (tt, _), r in zip(tasks, out) if tt == t])
        if b is not None:
            best_per[t] = b
            per_target[t] = b.jacobi_value
    if not best_per:
        raise SolverError(f"all targets failed from component {source}")
    ordered = sorted(best_per)
    winner = best_per[ordered[0]]
    for t in ordered[1:]:
        if best_per[t].jacobi_value < winner.jacobi_value * (1 - 1e-9):
            winner = best_per[t]
    result = replace(winner, per_target=per_target, mode="connecting")
    if not any(r.converged for r in best_per.values()):
        raise SolverError("no target converged")
    return result


def jacobi_distance_matrix(V: Potential, chart: DomainChart, cfg: SolveConfig = SolveConfig()):
    """Pairwise minimal Jacobi lengths d_ij (each unordered pair solved once)."""
    n = chart.n_components
    d = np.zeros((n, n))
    results = {}
    for i in range(n):
        for j in range(i + 1, n):
            r = solve_connecting(V, chart, i, cfg, targets=[j])
            d[i, j] = d[j, i] = r.jacobi_value
            results[(i, j)] = r
    return d, results


def solve_symmetric(V: Potential, chart: DomainChart, cfg: SolveConfig = SolveConfig(),
                    targets: Optional[Sequence[int]] = None) -> SolveResult:
    """Half orbit from the origin to the boundary, minimal over components."""
    origin = np.zeros(V.dimension)
    if float(V.value(origin)) <= 0:
        raise SolverError("origin is not inside the positive set")
    if np.linalg.norm(chart.seed) > 0:
        raise SolverError("symmetric mode needs a chart seeded at the origin")
    if not check_antipodal_symmetry(V, chart.bbox):
        warnings.warn("potential is not antipodally symmetric; symmetric extension may not solve the ODE",
                      SymmetryWarning, stacklevel=2)
    targets = [c.id for c in chart.components] if targets is None else list(targets)
    tasks = [(t, k) for t in targets for k in range(cfg.multistart)]
    runners = {t: _multistart(V, chart, "origin", t, cfg) for t in targets}
    out = _run_tasks(lambda tk: runners[tk[0]](tk[1]), tasks, cfg)
    per_target = {}
    best_per = {}
    for t in targets:
        b = _best([r for (tt, _), r in zip(tasks, out) if tt == t])
        if b is not None:
            best_per[t] = b
            per_target[t] = b.jacobi_value
    if not best_per:
        raise SolverError("symmetric solve failed for every component")
    ordered = sorted(best_per)
    winner = best_per[ordered[0]]
    for t in ordered[1:]:
        if best_per[t].jacobi_value < winner.jacobi_value * (1 - 1e-9):
            winner = best_per[t]
    return replace(winner, per_target=per_target, mode="symmetric", source_component=None)


# --------------------------------------------------------------------------- #
# independent check


def grid_geodesic_oracle(V: Potential, chart: DomainChart, source, target, resolution=None) -> float:
    """Dijkstra length on the 8-connected node graph of the closed domain.

    Edge weight sqrt(2) * mean(sqrt(V+)) at the edge ends * edge length.
    Boundary polyline vertices (or the origin) are attached to lattice nodes
    within 1.5 cells so the graph starts and ends on the boundary itself.
    """
    bbox = chart.bbox
    if bbox.dimension != 2:
        raise ValueError("oracle is planar")
    grid = chart.grid if resolution is None else sample_grid(V, bbox, resolution)
    seed_idx = tuple(np.clip(np.round((chart.seed - np.asarray(bbox.lo)) / grid.spacing).astype(int),
                             0, np.asarray(grid.resolution)))
    if grid.values[seed_idx] <= 0:
        raise SolverError("oracle grid misses the chart seed; refine the grid")
    h_cut, v_cut, _ = _cut_edges(V, grid, LEVEL_TOL)
    omega = _omega_mask(grid, seed_idx, h_cut, v_cut)
    nodes = grid.nodes()
    shape = omega.shape
    nid = np.arange(omega.size).reshape(shape)
    sq = np.sqrt(np.maximum(grid.values, 0.0))

    rows, cols, wts = [], [], []
    for di, dj, cut in ((1, 0, h_cut), (0, 1, v_cut), (1, 1, None), (1, -1, None)):
        a_sl = (slice(0, shape[0] - di), slice(max(0, -dj), shape[1] - max(0, dj)))
        b_sl = (slice(di, shape[0]), slice(max(0, dj), shape[1] + min(0, dj)))
        ok = omega[a_sl] & omega[b_sl]
        if cut is not None:
            ok &= ~cut
        else:
            # a diagonal may not jump a cell whose center is outside
            ci = slice(0, shape[0] - 1)
            cj = slice(0, shape[1] - 1)
            ok &= grid.centers[ci, cj] > 0 if dj == 1 else grid.centers[ci, cj] > 0
        length = float(np.linalg.norm(grid.spacing * np.array([di, dj])))
        rows.append(nid[a_sl][ok])
        cols.append(nid[b_sl][ok])
        wts.append(math.sqrt(2.0) * 0.5 * (sq[a_sl][ok] + sq[b_sl][ok]) * length)

    n_grid = omega.size
    extra_pts = []
    groups = {}

    def attach(label, pts):
        ids = []
        for p in np.atleast_2d(pts):
            extra_pts.append(p)
            ids.append(n_grid + len(extra_pts) - 1)
        groups[label] = ids

    for label, cid in (("src", source), ("tgt", target)):
        if cid == "origin" or (isinstance(cid, str) and cid == "origin"):
            attach(label, np.zeros(2))
        elif chart.singleton_point(cid) is not None:
            attach(label, chart.singleton_point(cid))
        else:
            attach(label, chart.components[cid].polyline[:-1] if chart.components[cid].closed
                   else chart.components[cid].polyline)
    flat_nodes = nodes.reshape(-1, 2)
    flat_omega = omega.reshape(-1)
    radius = 1.5 * grid.cell_diagonal
    from scipy.spatial import cKDTree

    tree = cKDTree(flat_nodes[flat_omega])
    omega_ids = np.nonzero(flat_omega)[0]
    ext = np.array(extra_pts)
    ext_sq = np.sqrt(np.maximum(np.asarray(V.value(ext), dtype=float), 0.0))
    for k, p in enumerate(ext):
        for j in tree.query_ball_point(p, radius):
            g = omega_ids[j]
            length = float(np.linalg.norm(flat_nodes[g] - p))
            rows.append(np.array([n_grid + k]))
            cols.append(np.array([g]))
            wts.append(np.array([math.sqrt(2.0) * 0.5 * (ext_sq[k] + sq.reshape(-1)[g]) * length]))
    super_src = n_grid + len(extra_pts)
    for k in groups["src"]:
        rows.append(np.array([super_src]))
        cols.append(np.array([k]))
        wts.append(np.array([0.0]))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(wts)
    n_total = super_src + 1
    # csgraph treats explicit zeros as missing edges: use a tiny epsilon
    w = np.where(w <= 0, 1e-300, w)
    graph = coo_matrix((w, (r, c)), shape=(n_total, n_total)).tocsr()
    dist = dijkstra(graph, directed=False, indices=super_src)
    best = float(np.min(dist[groups["tgt"]]))
    if not np.isfinite(best):
        raise SolverError("oracle found no path: domain disconnected at this resolution")
    return best
