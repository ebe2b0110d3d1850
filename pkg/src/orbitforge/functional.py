"""Discrete action and Jacobi functionals, time reparametrization, residuals.

Discretization used throughout: on segment k the potential is the trapezoid
average ``Vbar_k = (V(x_k) + V(x_{k+1})) / 2`` (negative node values clamped to 0
for the Jacobi length).  Then

    action_k = |dx_k|^2 / (2 dt_k) + dt_k * Vbar_k
    jacobi_k = sqrt(2 Vbar_k) * |dx_k|

so ``action_k >= jacobi_k`` with equality iff ``(|dx_k| / dt_k)^2 / 2 = Vbar_k``,
and the minimum over ``dt_k`` of ``action_k`` is ``jacobi_k`` exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .potential import Potential

LEVEL_TOL = 1e-10
CRITPOINT_SNAP_FACTOR = 1e-4


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class Endpoint:
    """Constraint on one end of a path.

    kind is ``"fixed"`` (pinned at ``point``), ``"boundary"`` (free on boundary
    component ``component``) or ``"origin"`` (pinned at 0, symmetric half-orbits).
    """

    kind: str = "fixed"
    component: Optional[int] = None
    point: Optional[tuple] = None

    @classmethod
    def fixed(cls, point) -> "Endpoint":
        return cls("fixed", None, tuple(float(v) for v in point))

    @classmethod
    def on_boundary(cls, component: int) -> "Endpoint":
        return cls("boundary", int(component))

    @classmethod
    def origin(cls) -> "Endpoint":
        return cls("origin")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "component": self.component,
                "point": list(self.point) if self.point is not None else None}


@dataclass(frozen=True)
class DiscretePath:
    nodes: np.ndarray  # (M + 1, n)
    start: Endpoint = field(default_factory=Endpoint)
    end: Endpoint = field(default_factory=Endpoint)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or len(nodes) < 3:
            raise PathError("a path needs at least 3 nodes (M >= 2)")
        object.__setattr__(self, "nodes", nodes)

    @property
    def M(self) -> int:
        return len(self.nodes) - 1

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    def with_nodes(self, nodes) -> "DiscretePath":
        return replace(self, nodes=nodes)

    def reversed(self) -> "DiscretePath":
        return DiscretePath(self.nodes[::-1].copy(), self.end, self.start)


@dataclass(frozen=True)
class TimedOrbit:
    nodes: np.ndarray
    times: np.ndarray  # endpoint entries are -inf / +inf when the arrival time is infinite
    t_minus: float
    t_plus: float
    energy_residual: float = float("nan")
    newton_residual: float = float("nan")

    @property
    def minus_infinite(self) -> bool:
        return math.isinf(self.t_minus)

    @property
    def plus_infinite(self) -> bool:
        return math.isinf(self.t_plus)

    @property
    def duration(self) -> float:
        return self.t_plus - self.t_minus

    def with_residuals(self, V: Potential) -> "TimedOrbit":
        return replace(self, energy_residual=energy_residual(self, V), newton_residual=newton_residual(self, V))

    def reversed(self) -> "TimedOrbit":
        return TimedOrbit(self.nodes[::-1].copy(), -self.times[::-1], -self.t_plus, -self.t_minus,
                          self.energy_residual, self.newton_residual)


def _nodes(path) -> np.ndarray:
    return path.nodes if isinstance(path, (DiscretePath, TimedOrbit)) else np.asarray(path, dtype=float)


def _segments(x: np.ndarray):
    dx = np.diff(x, axis=0)
    return dx, np.linalg.norm(dx, axis=1)


def action(path, times, V: Potential) -> float:
    """Trapezoidal discrete action sum of |dx|^2/(2 dt) + dt * Vbar."""
    x = _nodes(path)
    t = np.asarray(times, dtype=float)
    if t.shape != (len(x),):
        raise PathError("times must have one entry per node")
    dt = np.diff(t)
    if not np.all(dt > 0) or not np.all(np.isfinite(dt)):
        raise PathError("times must be finite and strictly increasing")
    _, L = _segments(x)
    v = np.asarray(V.value(x), dtype=float)
    vbar = 0.5 * (v[:-1] + v[1:])
    return float(np.sum(0.5 * L * L / dt + dt * vbar))


def segment_weights(x: np.ndarray, V: Potential, delta: float = 0.0):
    """Per-segment sqrt(2 (Vbar + delta)), the lengths, and clamped node values."""
    v = np.maximum(np.asarray(V.value(x), dtype=float), 0.0)
    _, L = _segments(x)
    w = np.sqrt(2.0 * (0.5 * (v[:-1] + v[1:]) + delta))
    return w, L, v


def jacobi(path, V: Potential, delta: float = 0.0) -> float:
    """Discrete Jacobi length; parametrization-free.  ``delta`` regularizes V."""
    w, L, _ = segment_weights(_nodes(path), V, delta)
    return float(np.sum(w * L))


def jacobi_action_gap(path, times, V: Potential) -> float:
    return action(path, times, V) - jacobi(path, V)


def optimal_times(path, V: Potential, t0: float = 0.0) -> np.ndarray:
    """Per-segment minimizers dt_k = |dx_k| / sqrt(2 Vbar_k) of the action."""
    w, L, _ = segment_weights(_nodes(path), V)
    if np.any(w <= 0):
        raise PathError("segment with non-positive potential has no finite optimal time")
    return t0 + np.concatenate([[0.0], np.cumsum(L / w)])


# --------------------------------------------------------------------------- #


def is_endpoint_time_infinite(x, critical_points: Sequence, snap: float) -> bool:
    """An endpoint within ``snap`` of a critical point on the zero level is
    reached only asymptotically (V vanishes quadratically there)."""
    x = np.asarray(x, dtype=float)
    return any(np.linalg.norm(np.asarray(p.location) - x) <= snap for p in critical_points)


def segment_times(x: np.ndarray, V: Potential) -> np.ndarray:
    """Transit time of each segment with V linear along it.

    integral of ds / sqrt(2 V) = 2 L / (sqrt(2 V_a) + sqrt(2 V_b)); finite when
    one end sits on a regular wall (V_b = 0), infinite only if both ends vanish.
    """
    v = np.maximum(np.asarray(V.value(x), dtype=float), 0.0)
    _, L = _segments(x)
    r = np.sqrt(2.0 * v)
    with np.errstate(divide="ignore"):
        return 2.0 * L / (r[:-1] + r[1:])


def reparametrize(path, V: Potential, infinite: tuple = (False, False),
                  anchor: Optional[int] = None) -> TimedOrbit:
    """Times from the energy relation |u'| = sqrt(2 V).

    ``infinite`` flags ends attached to a critical point (asymptotic arrival);
    other ends on the zero level are regular walls reached in finite time.
    Time 0 sits at ``anchor`` (default: the origin node of a symmetric path,
    else the node of largest V).
    """
    x = _nodes(path)
    v = np.asarray(V.value(x), dtype=float)
    if np.any(v[1:-1] <= 0):
        raise PathError("interior node outside the positive set")
    dt = segment_times(x, V)
    if not np.all(np.isfinite(dt[1:-1])):
        raise PathError("non-finite interior time step")
    t = np.concatenate([[0.0], np.cumsum(np.where(np.isfinite(dt), dt, 0.0))])
    if anchor is None:
        if isinstance(path, DiscretePath) and path.start.kind == "origin":
            anchor = 0
        elif isinstance(path, DiscretePath) and path.end.kind == "origin":
            anchor = len(x) - 1
        else:
            anchor = int(np.argmax(v))
    t = t - t[anchor]
    if infinite[0]:
        t[0] = -np.inf
    if infinite[1]:
        t[-1] = np.inf
    orbit = TimedOrbit(x.copy(), t, float(t[0]), float(t[-1]))
    return orbit.with_residuals(V)


def _interior(orbit: TimedOrbit):
    t = orbit.times
    k = np.arange(1, len(t) - 1)
    ok = np.isfinite(t[k - 1]) & np.isfinite(t[k + 1])
    return k[ok]


def energy_residual(orbit: TimedOrbit, V: Potential, relative: bool = False) -> float:
    """max |(1/2)|u'|^2 - V| over interior nodes, u' by central differences."""
    k = _interior(orbit)
    if not len(k):
        return 0.0
    x, t = orbit.nodes, orbit.times
    vel = (x[k + 1] - x[k - 1]) / (t[k + 1] - t[k - 1])[:, None]
    v = np.asarray(V.value(x[k]), dtype=float)
    res = float(np.max(np.abs(0.5 * np.einsum("ij,ij->i", vel, vel) - v)))
    if relative:
        vmax = float(np.max(np.asarray(V.value(x), dtype=float)))
        return res / vmax if vmax > 0 else res
    return res


def midpoint_energy_residual(orbit: TimedOrbit, V: Potential) -> float:
    """max over finite segments of |(|dx|/dt)^2/2 - V(midpoint)|."""
    x, t = orbit.nodes, orbit.times
    _, L = _segments(x)
    dt = np.diff(t)
    ok = np.isfinite(dt) & (dt > 0)
    if not ok.any():
        return 0.0
    vm = np.asarray(V.value(0.5 * (x[:-1] + x[1:])), dtype=float)
    return float(np.max(np.abs(0.5 * (L[ok] / dt[ok]) ** 2 - vm[ok])))


def newton_residual(orbit: TimedOrbit, V: Potential) -> float:
    """max |u'' - grad V(u)| over interior nodes (non-uniform 3-point stencil)."""
    k = _interior(orbit)
    if not len(k):
        return 0.0
    x, t = orbit.nodes, orbit.times
    h1 = (t[k] - t[k - 1])[:, None]
    h2 = (t[k + 1] - t[k])[:, None]
    acc = 2.0 * ((x[k + 1] - x[k]) / h2 - (x[k] - x[k - 1]) / h1) / (h1 + h2)
    return float(np.max(np.linalg.norm(acc - V.grad(x[k]), axis=1)))


# --------------------------------------------------------------------------- #
# export


def _fmt(v: float) -> str:
    return repr(float(v))


def orbit_to_csv(orbit: TimedOrbit, V: Potential) -> str:
    n = orbit.nodes.shape[1]
    v = np.asarray(V.value(orbit.nodes), dtype=float)
    speed = np.sqrt(2.0 * np.maximum(v, 0.0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["V", "speed"])
    for t, x, vk, s in zip(orbit.times, orbit.nodes, v, speed):
        w.writerow([_fmt(t)] + [_fmt(c) for c in x] + [_fmt(vk), _fmt(s)])
    return buf.getvalue()


def orbit_from_csv(text: str) -> TimedOrbit:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("x"))
    t = np.array([float(r[0]) for r in body])
    x = np.array([[float(c) for c in r[1:1 + n]] for r in body])
    return TimedOrbit(x, t, float(t[0]), float(t[-1]))


def orbit_summary(orbit: TimedOrbit) -> dict:
    return {
        "t_minus": None if orbit.minus_infinite else orbit.t_minus,
        "t_plus": None if orbit.plus_infinite else orbit.t_plus,
        "t_minus_infinite": orbit.minus_infinite,
        "t_plus_infinite": orbit.plus_infinite,
        "nodes": len(orbit.nodes),
        "energy_residual": orbit.energy_residual,
        "newton_residual": orbit.newton_residual,
    }


def orbit_to_json(orbit: TimedOrbit, **kw) -> str:
    d = orbit_summary(orbit)
    d["times"] = [None if not np.isfinite(t) else float(t) for t in orbit.times]
    d["path"] = orbit.nodes.tolist()
    return json.dumps(d, **kw)
