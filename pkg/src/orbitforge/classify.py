"""Orbit kinds, full-orbit extensions and the energy sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .functional import TimedOrbit, reparametrize
from .geometry import DomainChart, chart_for, connection_gate
from .potential import Box, Potential, find_critical_points, shift
from .solver import (
    SolveConfig,
    SolveResult,
    SolverError,
    _workers,
    jacobi_distance_matrix,
    solve_symmetric,
)

logger = logging.getLogger(__name__)

HETEROCLINIC = "Heteroclinic"
HOMOCLINIC = "Homoclinic"
PERIODIC_TWO_WALL = "PeriodicTwoWall"
PERIODIC_SYMMETRIC = "PeriodicSymmetric"
CONNECTING_FINITE = "ConnectingFinite"
KINDS = (HETEROCLINIC, HOMOCLINIC, PERIODIC_TWO_WALL, PERIODIC_SYMMETRIC, CONNECTING_FINITE)


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointKind:
    kind: str  # "CriticalPoint", "RegularBoundary" or "Origin"
    ref: Optional[int] = None  # critical point id or component id

    @property
    def critical(self) -> bool:
        return self.kind == "CriticalPoint"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ref": self.ref}


@dataclass
class ClassifiedOrbit:
    orbit: TimedOrbit  # the full (extended) orbit
    half: TimedOrbit  # the solved path, reparametrized
    kind: str
    period: Optional[float]
    endpoint_kinds: tuple
    jacobi: float
    source_component: Optional[int] = None
    target_component: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "period": self.period,
            "jacobi": self.jacobi,
            "source_component": self.source_component,
            "target_component": self.target_component,
            "endpoint_kinds": [e.to_dict() for e in self.endpoint_kinds],
            "t_minus": None if self.half.minus_infinite else self.half.t_minus,
            "t_plus": None if self.half.plus_infinite else self.half.t_plus,
            "energy_residual": self.orbit.energy_residual,
            "newton_residual": self.orbit.newton_residual,
        }


# --------------------------------------------------------------------------- #
# extensions


def _check_finite(t: float, what: str):
    if not math.isfinite(t):
        raise ClassificationError(f"{what} must be finite")


def extend_periodic(orbit: TimedOrbit) -> TimedOrbit:
    """Forward pass then its time reflection about t_plus: one full period."""
    _check_finite(orbit.t_minus, "t_minus")
    _check_finite(orbit.t_plus, "t_plus")
    x, t = orbit.nodes, orbit.times
    nodes = np.concatenate([x, x[-2::-1]])
    times = np.concatenate([t, 2.0 * orbit.t_plus - t[-2::-1]])
    return TimedOrbit(nodes, times, float(times[0]), float(times[-1]))


def extend_homoclinic(orbit: TimedOrbit) -> TimedOrbit:
    """Reflect about the wall time: v(t_plus + s) = v(t_plus - s)."""
    if not orbit.minus_infinite:
        raise ClassificationError("homoclinic extension needs an infinite start time")
    _check_finite(orbit.t_plus, "t_plus")
    x, t = orbit.nodes, orbit.times
    nodes = np.concatenate([x, x[-2::-1]])
    times = np.concatenate([t, 2.0 * orbit.t_plus - t[-2::-1]])
    return TimedOrbit(nodes, times, -math.inf, math.inf)


def extend_symmetric(orbit: TimedOrbit) -> TimedOrbit:
    """Full period on [-2 t_plus, 2 t_plus] from a half orbit 0 -> wall."""
    if orbit.plus_infinite:
        raise ClassificationError("t_plus is infinite: the orbit is a heteroclinic through the origin")
    if orbit.times[0] != 0.0 or np.any(orbit.nodes[0] != 0.0):
        raise ClassificationError("symmetric extension needs a half orbit starting at the origin at t = 0")
    x, t = orbit.nodes, orbit.times
    pos_x = np.concatenate([x, x[-2::-1]])
    pos_t = np.concatenate([t, 2.0 * orbit.t_plus - t[-2::-1]])
    nodes = np.concatenate([-pos_x[:0:-1], pos_x])
    times = np.concatenate([-pos_t[:0:-1], pos_t])
    return TimedOrbit(nodes, times, float(times[0]), float(times[-1]))


def extend_odd(orbit: TimedOrbit) -> TimedOrbit:
    """v(-t) = -v(t) for a half orbit from the origin reaching a critical point."""
    x, t = orbit.nodes, orbit.times
    nodes = np.concatenate([-x[:0:-1], x])
    times = np.concatenate([-t[:0:-1], t])
    return TimedOrbit(nodes, times, -orbit.t_plus, orbit.t_plus)


# --------------------------------------------------------------------------- #
# classification


def endpoint_kind(chart: DomainChart, x, endpoint) -> EndpointKind:
    if endpoint.kind == "origin":
        return EndpointKind("Origin")
    x = np.asarray(x, dtype=float)
    snap = chart.critpoint_snap
    if endpoint.kind == "boundary":
        comp = chart.components[endpoint.component]
        if comp.is_singleton:
            return EndpointKind("CriticalPoint", comp.critical_points[0])
        candidates = comp.critical_points
    else:
        candidates = tuple(p.id for p in chart.critical_points if abs(p.potential_value) < 1e-8)
    for cid in candidates:
        if np.linalg.norm(np.asarray(chart.critical_points[cid].location) - x) <= snap:
            return EndpointKind("CriticalPoint", cid)
    return EndpointKind("RegularBoundary", endpoint.component)


def _check_dichotomy(orbit: TimedOrbit, kinds):
    for t, k, side in ((orbit.t_minus, kinds[0], "start"), (orbit.t_plus, kinds[1], "end")):
        if k.critical and math.isfinite(t):
            raise ClassificationError(
                f"finite arrival time at critical point {k.ref} ({side}): V vanishes at least "
                "quadratically there, so the arrival time must diverge")
        if k.kind == "RegularBoundary" and not math.isfinite(t):
            raise ClassificationError(f"infinite arrival time at a regular boundary point ({side})")


def classify(result: SolveResult, chart: DomainChart, V: Potential) -> ClassifiedOrbit:
    if not result.converged:
        raise ClassificationError("solve did not converge")
    path = result.path
    kinds = (endpoint_kind(chart, path.nodes[0], path.start), endpoint_kind(chart, path.nodes[-1], path.end))
    half = reparametrize(path, V, infinite=(kinds[0].critical, kinds[1].critical))
    _check_dichotomy(half, kinds)
    base = dict(half=half, endpoint_kinds=kinds, jacobi=result.jacobi_value,
                source_component=result.source_component, target_component=result.target_component)

    if kinds[0].kind == "Origin":
        if kinds[1].critical:
            full = extend_odd(half).with_residuals(V)
            return ClassifiedOrbit(full, kind=HETEROCLINIC, period=None, **base)
        full = extend_symmetric(half).with_residuals(V)
        return ClassifiedOrbit(full, kind=PERIODIC_SYMMETRIC, period=4.0 * half.t_plus, **base)

    if kinds[0].critical and kinds[1].critical:
        kind = HOMOCLINIC if kinds[0].ref == kinds[1].ref else HETEROCLINIC
        return ClassifiedOrbit(half, kind=kind, period=None, **base)
    if kinds[0].critical or kinds[1].critical:
        h = half if kinds[0].critical else half.reversed()
        full = extend_homoclinic(h).with_residuals(V)
        return ClassifiedOrbit(full, kind=HOMOCLINIC, period=None, **base)
    comps = [chart.components[c] for c in (result.source_component, result.target_component) if c is not None]
    if any(not c.closed for c in comps):
        # a wall cut by the bounding box: reflection there is not a true wall
        return ClassifiedOrbit(half, kind=CONNECTING_FINITE, period=None, **base)
    full = extend_periodic(half).with_residuals(V)
    return ClassifiedOrbit(full, kind=PERIODIC_TWO_WALL, period=2.0 * (half.t_plus - half.t_minus), **base)


def window_distance(a: TimedOrbit, b: TimedOrbit, T_w: float, samples: int = 401) -> float:
    """sup over [-T_w, T_w] of |a(t) - b(t)| with linear interpolation in time."""
    t = np.linspace(-T_w, T_w, samples)

    def sample(o):
        ok = np.isfinite(o.times)
        ts, xs = o.times[ok], o.nodes[ok]
        if t[0] < ts[0] or t[-1] > ts[-1]:
            raise ValueError("window exceeds the orbit's finite time span")
        return np.stack([np.interp(t, ts, xs[:, d]) for d in range(xs.shape[1])], axis=1)

    return float(np.max(np.linalg.norm(sample(a) - sample(b), axis=1)))


# --------------------------------------------------------------------------- #
# sweep

SWEEP_COLUMNS = ("alpha", "n_components", "kind", "jacobi", "period", "energy_residual", "newton_residual")


@dataclass
class SweepRow:
    alpha: float
    n_components: int = 0
    kind: Optional[str] = None
    jacobi: float = float("nan")
    period: Optional[float] = None
    energy_residual: float = float("nan")
    newton_residual: float = float("nan")
    mode: str = ""
    error: Optional[str] = None
    classified: Optional[ClassifiedOrbit] = field(default=None, repr=False)
    result: Optional[SolveResult] = field(default=None, repr=False)
    chart: Optional[DomainChart] = field(default=None, repr=False)
    distances: Optional[list] = None
    gates: Optional[dict] = None

    @property
    def period_value(self) -> float:
        """Period with infinite for the asymptotic kinds."""
        if self.kind in (HETEROCLINIC, HOMOCLINIC):
            return math.inf
        return self.period if self.period is not None else math.nan

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in SWEEP_COLUMNS}
        d["period"] = None if self.kind in (HETEROCLINIC, HOMOCLINIC) else self.period
        d["period_infinite"] = self.kind in (HETEROCLINIC, HOMOCLINIC)
        d["mode"] = self.mode
        d["error"] = self.error
        d["distances"] = self.distances
        d["gates"] = self.gates
        if self.classified is not None:
            d["orbit"] = self.classified.to_dict()
        return d


def auto_alphas(U: Potential, bbox: Box) -> list:
    """Twelve energy levels spanning the regimes of a potential with a negative
    global minimum, a zero-level local minimum and a positive saddle."""
    cps = find_critical_points(U, bbox)
    values = [p.potential_value for p in cps]
    u_min = min(values)
    saddles = [p.potential_value for p in cps if p.morse_index == 1 and p.potential_value > 0]
    if u_min >= 0 or not saddles:
        raise ValueError("auto alphas need a negative minimum and a positive saddle value")
    u_sad = min(saddles)
    minus_alpha = [u_min] + [u_min * f for f in (0.9, 0.7, 0.5, 0.3, 0.1, 0.03)] + [0.0] + \
        [u_sad * f for f in (0.1, 0.3, 0.6, 0.9)]
    return sorted(-m for m in minus_alpha)


def _minimal_pair(d: np.ndarray):
    n = d.shape[0]
    best = None
    for i in range(n):
        for j in range(i + 1, n):
            if np.isfinite(d[i, j]) and (best is None or d[i, j] < d[best] * (1 - 1e-9)):
                best = (i, j)
    return best


def sweep_point(U: Potential, alpha: float, cfg: SolveConfig, bbox: Box, resolution: int = 256) -> SweepRow:
    row = SweepRow(alpha=float(alpha))
    try:
        V = shift(U, alpha)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cps = find_critical_points(V, bbox)
            chart = chart_for(V, bbox, resolution, critical_points=cps)
        row.n_components = chart.n_components
        row.chart = chart
        origin = np.zeros(bbox.dimension)
        if bbox.contains(origin) and float(V.value(origin)) > 0:
            row.mode = "symmetric"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result = solve_symmetric(V, chart, cfg)
        else:
            row.mode = "connecting"
            if chart.n_components < 2:
                raise SolverError("fewer than two boundary components")
            d, results = jacobi_distance_matrix(V, chart, cfg)
            row.distances = d.tolist()
            row.gates = {f"{i}-{j}": connection_gate(d, i, j)
                         for i in range(len(d)) for j in range(i + 1, len(d))}
            pair = _minimal_pair(d)
            if pair is None:
                raise SolverError("no connection found")
            result = results[pair]
        row.result = result
        c = classify(result, chart, V)
        row.classified = c
        row.kind = c.kind
        row.jacobi = c.jacobi
        row.period = c.period
        row.energy_residual = c.orbit.energy_residual
        row.newton_residual = c.orbit.newton_residual
    except Exception as exc:  # recorded, the sweep goes on
        logger.warning("sweep point alpha=%r failed: %s", alpha, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def bifurcation_sweep(U: Potential, alphas: Sequence[float], cfg: SolveConfig = SolveConfig(),
                      bbox: Optional[Box] = None, resolution: int = 256) -> list:
    """One row per alpha, ordered by alpha."""
    if bbox is None:
        raise ValueError("a bounding box is required")
    alphas = sorted(float(a) for a in alphas)
    n = _workers(cfg)
    inner = replace(cfg, threads=1)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(lambda a: sweep_point(U, a, inner, bbox, resolution), alphas))
    return [sweep_point(U, a, inner, bbox, resolution) for a in alphas]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        period = "inf" if r.kind in (HETEROCLINIC, HOMOCLINIC) else _cell(r.period)
        w.writerow([_cell(r.alpha), r.n_components, r.kind or "failed", _cell(r.jacobi), period,
                    _cell(r.energy_residual), _cell(r.newton_residual)])
    return buf.getvalue()


def sweep_to_json(rows: Sequence[SweepRow], **kw) -> str:
    return json.dumps([r.to_dict() for r in rows], **kw)
