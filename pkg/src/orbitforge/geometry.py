"""Positivity domain and its boundary components in the plane.

The region is sampled on a node grid, flood-filled from a seed, and its boundary
traced with marching squares.  Zero crossings are refined on each cell edge until
``|V| < level_tol``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from .potential import Box, CriticalPoint, Potential

logger = logging.getLogger(__name__)

LEVEL_TOL = 1e-10


class ChartError(ValueError):
    pass


class ChartWarning(UserWarning):
    pass


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SignGrid:
    bbox: Box
    resolution: tuple  # cells per axis
    values: np.ndarray  # (nx + 1, ny + 1) node samples
    centers: np.ndarray  # (nx, ny) cell-center samples

    @property
    def axes(self):
        return [np.linspace(lo, hi, r + 1) for lo, hi, r in zip(self.bbox.lo, self.bbox.hi, self.resolution)]

    @property
    def spacing(self) -> np.ndarray:
        return (np.subtract(self.bbox.hi, self.bbox.lo)) / np.asarray(self.resolution)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def node(self, i, j) -> np.ndarray:
        return np.asarray(self.bbox.lo) + self.spacing * np.array([i, j], dtype=float)

    def nodes(self) -> np.ndarray:
        ax, ay = self.axes
        return np.stack(np.meshgrid(ax, ay, indexing="ij"), axis=-1)


def sample_grid(V: Potential, bbox: Box, resolution=256) -> SignGrid:
    if V.dimension != 2 or bbox.dimension != 2:
        raise ChartError("domain extraction is planar (dimension 2)")
    res = (int(resolution),) * 2 if np.ndim(resolution) == 0 else tuple(int(r) for r in resolution)
    if min(res) < 8:
        raise ChartError("grid resolution must be at least 8 cells per axis")
    ax = [np.linspace(lo, hi, r + 1) for lo, hi, r in zip(bbox.lo, bbox.hi, res)]
    nodes = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    values = np.asarray(V.value(nodes), dtype=float)
    centers = np.asarray(V.value(0.25 * (nodes[:-1, :-1] + nodes[1:, :-1] + nodes[:-1, 1:] + nodes[1:, 1:])))
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(centers))):
        raise ChartError("potential is not finite on the grid")
    return SignGrid(bbox, res, values, centers)


@dataclass(frozen=True)
class BoundaryComponent:
    id: int
    polyline: np.ndarray  # (m, 2); closed components repeat the first node at the end
    diameter: float
    critical_points: tuple = ()  # ids into DomainChart.critical_points
    is_singleton: bool = False
    closed: bool = True

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "diameter": float(self.diameter),
            "closed": bool(self.closed),
            "is_singleton": bool(self.is_singleton),
            "critical_points": list(self.critical_points),
            "polyline": self.polyline.tolist(),
        }


@dataclass(frozen=True)
class DomainChart:
    grid: SignGrid
    seed: np.ndarray
    omega: np.ndarray  # boolean node mask of the component containing the seed
    components: tuple
    gap_matrix: np.ndarray
    critical_points: tuple = ()
    touches_bbox: bool = False

    @property
    def bbox(self) -> Box:
        return self.grid.bbox

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def singleton_tol(self) -> float:
        return 2.0 * self.grid.cell_diagonal

    @property
    def critpoint_snap(self) -> float:
        return 1e-4 * self.bbox.diagonal

    def component(self, cid: int) -> BoundaryComponent:
        return self.components[cid]

    def singleton_point(self, cid: int) -> Optional[np.ndarray]:
        comp = self.components[cid]
        if not comp.is_singleton:
            return None
        return np.array(self.critical_points[comp.critical_points[0]].location, dtype=float)

    def nearest_component(self, x) -> tuple[int, float]:
        best, dist = -1, np.inf
        for comp in self.components:
            d = polyline_distance(comp.polyline, x)
            if d < dist:
                best, dist = comp.id, d
        return best, dist

    def to_dict(self) -> dict:
        return {
            "bbox": {"lo": list(self.bbox.lo), "hi": list(self.bbox.hi)},
            "resolution": list(self.grid.resolution),
            "seed": [float(v) for v in self.seed],
            "touches_bbox": bool(self.touches_bbox),
            "components": [c.to_dict() for c in self.components],
            "critical_points": [c.to_dict() for c in self.critical_points],
            "gap_matrix": np.asarray(self.gap_matrix).tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# --------------------------------------------------------------------------- #
# flood fill


def _cut_edges(V: Potential, grid: SignGrid, level_tol: float):
    """Grid edges between two positive nodes along which V still reaches zero.

    These pass through (or next to) a zero-level saddle or a sliver of the
    negative set that the node samples miss.  Screening uses the cubic Hermite
    interpolant of node values and slopes; candidates get a bounded 1-D
    minimization.  Returns boolean masks for horizontal and vertical edges and
    the dip locations keyed by ("h"|"v", i, j).
    """
    nodes = grid.nodes()
    vals = grid.values
    G = np.asarray(V.grad(nodes), dtype=float)
    hx, hy = grid.spacing
    s = np.linspace(0.0, 1.0, 17)[1:-1]
    h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
    h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
    cuts = {}
    masks = []
    for kind, f0, f1, d0, d1, a0 in (
        ("h", vals[:-1, :], vals[1:, :], G[:-1, :, 0] * hx, G[1:, :, 0] * hx, nodes[:-1, :]),
        ("v", vals[:, :-1], vals[:, 1:], G[:, :-1, 1] * hy, G[:, 1:, 1] * hy, nodes[:, :-1]),
    ):
        herm = (h00 * f0[..., None] + h10 * d0[..., None] + h01 * f1[..., None] + h11 * d1[..., None]).min(-1)
        cand = (f0 > 0) & (f1 > 0) & (herm < 0.25 * np.minimum(f0, f1))
        mask = np.zeros(f0.shape, dtype=bool)
        step = np.array([hx, 0.0]) if kind == "h" else np.array([0.0, hy])
        for i, j in zip(*np.nonzero(cand)):
            start = a0[i, j]
            res = minimize_scalar(lambda t: float(V.value(start + t * step)), bounds=(0.0, 1.0),
                                  method="bounded", options={"xatol": 1e-12})
            if res.fun <= level_tol:
                mask[i, j] = True
                cuts[(kind, int(i), int(j))] = start + res.x * step
        masks.append(mask)
    return masks[0], masks[1], cuts


def _omega_mask(grid: SignGrid, seed_node: tuple, h_cut=None, v_cut=None) -> np.ndarray:
    pos = grid.values > 0
    nx1, ny1 = pos.shape
    idx = np.arange(pos.size).reshape(pos.shape)
    h_ok = pos[:-1, :] & pos[1:, :]
    v_ok = pos[:, :-1] & pos[:, 1:]
    if h_cut is not None:
        h_ok &= ~h_cut
        v_ok &= ~v_cut
    c = grid.centers > 0
    p00, p10, p01, p11 = pos[:-1, :-1], pos[1:, :-1], pos[:-1, 1:], pos[1:, 1:]
    # saddle cells: link diagonal positives when the center is positive
    d1 = c & p00 & p11 & ~p10 & ~p01
    d2 = c & p10 & p01 & ~p00 & ~p11
    rows = np.concatenate([idx[:-1, :][h_ok], idx[:, :-1][v_ok], idx[:-1, :-1][d1], idx[1:, :-1][d2]])
    cols = np.concatenate([idx[1:, :][h_ok], idx[:, 1:][v_ok], idx[1:, 1:][d1], idx[:-1, 1:][d2]])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(pos.size, pos.size))
    _, labels = connected_components(graph, directed=False)
    labels = labels.reshape(pos.shape)
    return (labels == labels[seed_node]) & pos


# --------------------------------------------------------------------------- #
# marching squares


def _refine_crossings(V: Potential, a: np.ndarray, b: np.ndarray, fa: np.ndarray, fb: np.ndarray,
                      level_tol: float, max_iter: int = 80) -> np.ndarray:
    """Root of V on segments [a, b] with fa > 0 >= fb (Illinois regula falsi)."""
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    flo, fhi = fa.copy(), fb.copy()
    t = np.where(fhi == 0, 1.0, flo / (flo - fhi))
    side = np.zeros(len(a), dtype=int)
    for _ in range(max_iter):
        x = a + t[:, None] * (b - a)
        f = np.asarray(V.value(x), dtype=float)
        done = (np.abs(f) < level_tol) | (hi - lo < 1e-15)
        if done.all():
            break
        left = f > 0
        lo = np.where(~done & left, t, lo)
        flo = np.where(~done & left, f, flo)
        hi = np.where(~done & ~left, t, hi)
        fhi = np.where(~done & ~left, f, fhi)
        # Illinois: halve the stale endpoint value when the same side repeats
        same = ~done & (side == np.where(left, 1, -1))
        fhi = np.where(same & left, 0.5 * fhi, fhi)
        flo = np.where(same & ~left, 0.5 * flo, flo)
        side = np.where(done, side, np.where(left, 1, -1))
        denom = flo - fhi
        tn = np.where(denom != 0, lo + (hi - lo) * flo / np.where(denom != 0, denom, 1), 0.5 * (lo + hi))
        t = np.where(done, t, np.clip(tn, lo, hi))
    return a + t[:, None] * (b - a)


def _trace(V: Potential, grid: SignGrid, inside: np.ndarray, level_tol: float, cuts=None):
    """Closed or open polylines separating ``inside`` nodes from the rest.

    ``cuts`` maps cut edges to their dip points, used in place of a sign-change
    root where the node outside ``inside`` is itself positive.
    """
    nodes = grid.nodes()
    vals = grid.values
    nx, ny = grid.resolution
    # edge ids: horizontal (i,j)-(i+1,j) first, then vertical (i,j)-(i,j+1)
    h_cross = inside[:-1, :] != inside[1:, :]
    v_cross = inside[:, :-1] != inside[:, 1:]
    h_id = -np.ones(h_cross.shape, dtype=int)
    v_id = -np.ones(v_cross.shape, dtype=int)
    n_h = int(h_cross.sum())
    h_id[h_cross] = np.arange(n_h)
    v_id[v_cross] = n_h + np.arange(int(v_cross.sum()))

    hi_, hj_ = np.nonzero(h_cross)
    vi_, vj_ = np.nonzero(v_cross)
    ea = np.concatenate([nodes[hi_, hj_], nodes[vi_, vj_]])
    eb = np.concatenate([nodes[hi_ + 1, hj_], nodes[vi_, vj_ + 1]])
    fa = np.concatenate([vals[hi_, hj_], vals[vi_, vj_]])
    fb = np.concatenate([vals[hi_ + 1, hj_], vals[vi_, vj_ + 1]])
    ina = np.concatenate([inside[hi_, hj_], inside[vi_, vj_]])
    # orient each edge so that the first end is the inside (positive) one
    a = np.where(ina[:, None], ea, eb)
    b = np.where(ina[:, None], eb, ea)
    fpos = np.where(ina, fa, fb)
    fneg = np.minimum(np.where(ina, fb, fa), 0.0)
    outside_pos = np.where(ina, fb, fa) > 0
    points = np.zeros((len(a), 2))
    root = ~outside_pos
    if root.any():
        points[root] = _refine_crossings(V, a[root], b[root], fpos[root], fneg[root], level_tol)
    if outside_pos.any():
        keys = [("h", int(i), int(j)) for i, j in zip(hi_, hj_)] + [("v", int(i), int(j)) for i, j in zip(vi_, vj_)]
        for k in np.nonzero(outside_pos)[0]:
            dip = (cuts or {}).get(keys[k])
            if dip is None:
                raise ChartError("inconsistent inside mask: positive node outside the domain without a cut")
            points[k] = dip

    # cell edges: bottom, right, top, left
    e0 = h_id[:, :-1]
    e1 = v_id[1:, :]
    e2 = h_id[:, 1:]
    e3 = v_id[:-1, :]
    c0, c1 = inside[:-1, :-1], inside[1:, :-1]
    c2, c3 = inside[1:, 1:], inside[:-1, 1:]
    count = (e0 >= 0).astype(int) + (e1 >= 0) + (e2 >= 0) + (e3 >= 0)

    segments = []
    for i, j in zip(*np.nonzero(count == 2)):
        ids = [e for e in (e0[i, j], e1[i, j], e2[i, j], e3[i, j]) if e >= 0]
        segments.append((ids[0], ids[1]))
    for i, j in zip(*np.nonzero(count == 4)):
        center_in = grid.centers[i, j] > 0
        if c0[i, j] == center_in:
            # c0 and c2 share the center's side: cut off corners c1 and c3
            segments += [(e0[i, j], e1[i, j]), (e2[i, j], e3[i, j])]
        else:
            segments += [(e0[i, j], e3[i, j]), (e1[i, j], e2[i, j])]

    adj: dict[int, list[int]] = {}
    for s, (p, q) in enumerate(segments):
        adj.setdefault(int(p), []).append(s)
        adj.setdefault(int(q), []).append(s)
    used = np.zeros(len(segments), dtype=bool)
    chains = []

    def walk(start_edge, start_seg):
        chain = [start_edge]
        edge, seg = start_edge, start_seg
        while True:
            used[seg] = True
            p, q = segments[seg]
            edge = int(q) if int(p) == edge else int(p)
            chain.append(edge)
            nxt = [s for s in adj[edge] if not used[s]]
            if not nxt:
                return chain
            seg = nxt[0]

    # open chains start at degree-1 edges (on the bbox frame)
    for e in sorted(k for k, v in adj.items() if len(v) == 1):
        s = adj[e][0]
        if not used[s]:
            chains.append((walk(e, s), False))
    for s in range(len(segments)):
        if not used[s]:
            chain = walk(int(segments[s][0]), s)
            chains.append((chain, chain[0] == chain[-1]))
    return [(points[np.array(c)], closed) for c, closed in chains]


def _diameter(pts: np.ndarray) -> float:
    pts = np.unique(pts, axis=0)
    if len(pts) < 2:
        return 0.0
    if len(pts) > 3:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    return float(pdist(pts).max())


def polyline_distance(poly: np.ndarray, x) -> float:
    """Euclidean distance from ``x`` to a polyline (segments, not just nodes)."""
    x = np.asarray(x, dtype=float)
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 1:
        return float(np.linalg.norm(poly[0] - x))
    a, b = poly[:-1], poly[1:]
    d = b - a
    ll = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", x - a, d) / np.where(ll > 0, ll, 1), 0, 1)
    proj = a + t[:, None] * d
    return float(np.min(np.linalg.norm(proj - x, axis=1)))


def nearest_on_polyline(poly: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 1:
        return poly[0].copy()
    a, b = poly[:-1], poly[1:]
    d = b - a
    ll = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", x - a, d) / np.where(ll > 0, ll, 1), 0, 1)
    proj = a + t[:, None] * d
    return proj[np.argmin(np.linalg.norm(proj - x, axis=1))]


def _gap_matrix(polys: Sequence[np.ndarray]) -> np.ndarray:
    n = len(polys)
    gaps = np.zeros((n, n))
    trees = [cKDTree(p) for p in polys]
    for i in range(n):
        for j in range(i + 1, n):
            d, _ = trees[j].query(polys[i], k=1)
            gaps[i, j] = gaps[j, i] = float(np.min(d))
    return gaps


def _components_from_chains(chains, cell: float):
    """Merge chains that touch (share a point) into components."""
    n = len(chains)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    if n > 1:
        pts = np.concatenate([c for c, _ in chains])
        owner = np.concatenate([np.full(len(c), k) for k, (c, _) in enumerate(chains)])
        for p, q in cKDTree(pts).query_pairs(1e-9 * cell):
            a, b = find(owner[p]), find(owner[q])
            if a != b:
                parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    out = []
    for members in groups.values():
        polys = [chains[k][0] for k in members]
        closed = all(chains[k][1] for k in members)
        out.append((np.concatenate(polys) if len(polys) > 1 else polys[0], closed))
    return out


def extract_domain(V: Potential, seed, bbox: Box, resolution=256, level_tol: float = LEVEL_TOL,
                   grid: Optional[SignGrid] = None) -> DomainChart:
    """Component of {V > 0} containing ``seed`` and the components of its boundary."""
    seed = np.asarray(seed, dtype=float)
    if float(V.value(seed)) <= 0:
        raise ChartError(f"seed {seed.tolist()} is not in the positive set (V = {float(V.value(seed)):.3g})")
    if grid is None:
        grid = sample_grid(V, bbox, resolution)
    if not bbox.contains(seed):
        raise ChartError("seed lies outside the bounding box")
    h = grid.spacing
    base = np.floor((seed - np.asarray(bbox.lo)) / h).astype(int)
    base = np.clip(base, 0, np.asarray(grid.resolution) - 1)
    corners = [(base[0] + di, base[1] + dj) for di in (0, 1) for dj in (0, 1)]
    corners.sort(key=lambda ij: np.linalg.norm(grid.node(*ij) - seed))
    positive = [ij for ij in corners if grid.values[ij] > 0]
    if not positive:
        raise ChartError("seed cell has no positive grid node; refine the grid")
    h_cut, v_cut, cuts = _cut_edges(V, grid, level_tol)
    omega = _omega_mask(grid, positive[0], h_cut, v_cut)

    touches = bool(omega[0, :].any() or omega[-1, :].any() or omega[:, 0].any() or omega[:, -1].any())
    if touches:
        warnings.warn("positive region touches the bounding box; coercivity surrogate violated",
                      ChartWarning, stacklevel=2)

    chains = _trace(V, grid, omega, level_tol, cuts)
    merged = _components_from_chains(chains, grid.cell_diagonal)
    merged.sort(key=lambda pc: (tuple(np.round(pc[0].mean(axis=0), 9)), len(pc[0])))
    comps = tuple(
        BoundaryComponent(id=k, polyline=poly, diameter=_diameter(poly), closed=closed)
        for k, (poly, closed) in enumerate(merged)
    )
    gaps = _gap_matrix([c.polyline for c in comps])
    off = gaps[~np.eye(len(comps), dtype=bool)]
    if off.size and np.any(off <= 0):
        warnings.warn("two boundary components touch at grid resolution", ChartWarning, stacklevel=2)
    return DomainChart(grid=grid, seed=seed, omega=omega, components=comps, gap_matrix=gaps,
                       touches_bbox=touches)


def attach_critical_points(chart: DomainChart, points: Sequence[CriticalPoint], tol: Optional[float] = None,
                           level_tol: float = LEVEL_TOL) -> DomainChart:
    """Attach zero-level critical points to nearby components; flag singletons.

    A zero-level local minimum of V that no polyline passes near is an isolated
    boundary point the grid could not resolve; it becomes its own singleton
    component.
    """
    tol = 2.0 * chart.grid.cell_diagonal if tol is None else tol
    points = [replace(p, id=k) for k, p in enumerate(points)]
    hosts: dict[int, list[int]] = {c.id: [] for c in chart.components}
    extra = []
    for p in points:
        if abs(p.potential_value) >= level_tol:
            continue
        cid, dist = chart.nearest_component(p.location)
        if cid >= 0 and dist < tol:
            hosts[cid].append(p.id)
        elif p.morse_index == 0 and chart.bbox.contains(p.location):
            extra.append(p)
        else:
            warnings.warn(f"critical point {p.location.tolist()} on the zero level is not near any "
                          "boundary polyline; grid too coarse", ChartWarning, stacklevel=2)

    comps = [replace(c, critical_points=tuple(hosts[c.id])) for c in chart.components]
    for p in extra:
        comps.append(BoundaryComponent(id=len(comps), polyline=np.array([p.location, p.location]),
                                       diameter=0.0, critical_points=(p.id,)))
    singleton_tol = chart.singleton_tol
    comps = [replace(c, is_singleton=bool(c.diameter < singleton_tol and len(c.critical_points) == 1))
             for c in comps]
    gaps = _gap_matrix([c.polyline for c in comps]) if extra else chart.gap_matrix
    return replace(chart, components=tuple(comps), gap_matrix=gaps, critical_points=tuple(points))


def project_to_boundary(V: Potential, x, level_tol: float = LEVEL_TOL, max_iter: int = 60) -> np.ndarray:
    """Newton along grad V onto the zero level."""
    x = np.array(x, dtype=float)
    for _ in range(max_iter):
        v = float(V.value(x))
        if abs(v) < level_tol:
            return x
        g = V.grad(x)
        gg = float(g @ g)
        if not np.isfinite(v) or gg <= 1e-300:
            break
        x = x - (v / gg) * g
    v = float(V.value(x))
    if abs(v) < level_tol:
        return x
    raise ProjectionError(f"boundary projection did not converge (|V| = {abs(v):.3g})")


def connection_gate(d, i: int, j: int) -> bool:
    """True iff d[i][j] < d[i][k] + d[k][j] for every other component k.

    ``d`` is a distance matrix (Jacobi distances, or geometric gaps as a
    heuristic) or a chart, whose gap matrix is then used.
    """
    d = np.asarray(d.gap_matrix if isinstance(d, DomainChart) else d, dtype=float)
    for k in range(d.shape[0]):
        if k in (i, j):
            continue
        if not d[i, j] < d[i, k] + d[k, j]:
            return False
    return True


def chart_for(V: Potential, bbox: Box, resolution=256, seed=None, critical_points=None,
              critical_seeds: int = 21) -> DomainChart:
    """Extract the chart and attach critical points in one call."""
    from .potential import find_critical_points

    if seed is None:
        seed = default_seed(V, bbox, resolution)
    chart = extract_domain(V, seed, bbox, resolution)
    if critical_points is None:
        critical_points = find_critical_points(V, bbox, critical_seeds) if V.smoothness == "C2" else []
    return attach_critical_points(chart, critical_points)


def default_seed(V: Potential, bbox: Box, resolution=256) -> np.ndarray:
    """The origin when it is in the positive set, else the nearest positive grid node."""
    origin = np.zeros(bbox.dimension)
    if bbox.contains(origin) and float(V.value(origin)) > 0:
        return origin
    grid = sample_grid(V, bbox, resolution)
    nodes = grid.nodes()[grid.values > 0]
    if not len(nodes):
        raise ChartError("potential is nowhere positive in the bounding box")
    return nodes[np.argmin(np.linalg.norm(nodes, axis=1))]
